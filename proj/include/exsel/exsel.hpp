#pragma once

#include "exsel/altmin.hpp"
#include "exsel/bm25.hpp"
#include "exsel/common.hpp"
#include "exsel/corpus.hpp"
#include "exsel/dpp.hpp"
#include "exsel/error.hpp"
#include "exsel/metrics.hpp"
#include "exsel/pipeline.hpp"
#include "exsel/prompt.hpp"
#include "exsel/remote_scorer.hpp"
#include "exsel/retriever.hpp"
#include "exsel/scorer.hpp"
#include "exsel/synth.hpp"
#include "exsel/text.hpp"
