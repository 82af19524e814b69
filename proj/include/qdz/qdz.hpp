#pragma once

// Umbrella header for the qdz model-compression toolkit.

#include "qdz/bitpack.hpp"
#include "qdz/config.hpp"
#include "qdz/container.hpp"
#include "qdz/crc32.hpp"
#include "qdz/dataset.hpp"
#include "qdz/errors.hpp"
#include "qdz/huffman.hpp"
#include "qdz/model_io.hpp"
#include "qdz/net.hpp"
#include "qdz/pipeline.hpp"
#include "qdz/quant.hpp"
#include "qdz/rng.hpp"
#include "qdz/sizing.hpp"
#include "qdz/stats.hpp"
#include "qdz/tensor.hpp"
#include "qdz/train.hpp"
#include "qdz/version.hpp"
