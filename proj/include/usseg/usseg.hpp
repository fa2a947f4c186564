#pragma once

#include "usseg/backbone.hpp"
#include "usseg/checkpoint.hpp"
#include "usseg/contrast_attention.hpp"
#include "usseg/dataset.hpp"
#include "usseg/detect.hpp"
#include "usseg/gradcheck.hpp"
#include "usseg/metrics.hpp"
#include "usseg/model.hpp"
#include "usseg/overlay.hpp"
#include "usseg/pyramid.hpp"
#include "usseg/run_config.hpp"
#include "usseg/synth.hpp"
#include "usseg/trainer.hpp"
