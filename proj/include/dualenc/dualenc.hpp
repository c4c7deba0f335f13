#pragma once

#include "dualenc/common.hpp"
#include "dualenc/discrete.hpp"
#include "dualenc/encoder.hpp"
#include "dualenc/eval.hpp"
#include "dualenc/loss.hpp"
#include "dualenc/parallel.hpp"
#include "dualenc/ranking.hpp"
#include "dualenc/search.hpp"
#include "dualenc/tasks.hpp"
#include "dualenc/text.hpp"
#include "dualenc/train.hpp"
