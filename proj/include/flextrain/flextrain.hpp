#pragma once

#include "flextrain/error.hpp"
#include "flextrain/rng.hpp"
#include "flextrain/matrix.hpp"
#include "flextrain/nn.hpp"
#include "flextrain/checkpoint.hpp"
#include "flextrain/sampler.hpp"
#include "flextrain/cost.hpp"
#include "flextrain/losses.hpp"
#include "flextrain/data.hpp"
#include "flextrain/evaluate.hpp"
#include "flextrain/report.hpp"
#include "flextrain/trainer.hpp"
#include "flextrain/fedsim.hpp"
#include "flextrain/config.hpp"
