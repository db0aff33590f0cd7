#pragma once

#include "astute/baselines.hpp"
#include "astute/cli.hpp"
#include "astute/data_model.hpp"
#include "astute/evaluation.hpp"
#include "astute/llm_gateway.hpp"
#include "astute/pipeline.hpp"
#include "astute/prompts.hpp"
#include "astute/text.hpp"
