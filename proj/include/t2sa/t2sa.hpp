#pragma once

// Umbrella header.

#include "t2sa/annotation.hpp"
#include "t2sa/annotation_server.hpp"
#include "t2sa/blocking.hpp"
#include "t2sa/chunker.hpp"
#include "t2sa/digest.hpp"
#include "t2sa/error.hpp"
#include "t2sa/gateway.hpp"
#include "t2sa/journal.hpp"
#include "t2sa/json_io.hpp"
#include "t2sa/labels_csv.hpp"
#include "t2sa/matchers.hpp"
#include "t2sa/metrics.hpp"
#include "t2sa/pipeline.hpp"
#include "t2sa/prompts.hpp"
#include "t2sa/stories.hpp"
#include "t2sa/text.hpp"
#include "t2sa/tokenizer.hpp"
#include "t2sa/transcript.hpp"
#include "t2sa/types.hpp"
