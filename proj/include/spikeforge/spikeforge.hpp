#pragma once

#include "spikeforge/binary_io.hpp"
#include "spikeforge/checkpoint.hpp"
#include "spikeforge/dataset.hpp"
#include "spikeforge/detection.hpp"
#include "spikeforge/emulator.hpp"
#include "spikeforge/error.hpp"
#include "spikeforge/evaluation.hpp"
#include "spikeforge/events.hpp"
#include "spikeforge/network.hpp"
#include "spikeforge/neuron.hpp"
#include "spikeforge/parallel.hpp"
#include "spikeforge/tape.hpp"
#include "spikeforge/tensor.hpp"
#include "spikeforge/trainer.hpp"
