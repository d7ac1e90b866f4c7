#pragma once

#include "d2nn/autograd.hpp"
#include "d2nn/checkpoint.hpp"
#include "d2nn/config.hpp"
#include "d2nn/data_io.hpp"
#include "d2nn/evaluation.hpp"
#include "d2nn/metrics.hpp"
#include "d2nn/model.hpp"
#include "d2nn/synthetic.hpp"
#include "d2nn/trainer.hpp"
#include "d2nn/training.hpp"
