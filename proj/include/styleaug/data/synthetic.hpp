#pragma once

#include <cstdint>

#include "styleaug/data/dataset.hpp"

namespace styleaug::data {

// Procedural labelled images: the class fixes the object shape, while colour,
// position, background gradient and texture vary per sample. Used where no
// real dataset is available (tests, smoke runs). Normalization is computed
// from a train-split draw with the same seed so train and test handles agree.
DatasetHandle make_synthetic(std::size_t count, std::size_t resolution, std::size_t num_classes, Split split,
                             std::uint64_t seed);

}  // namespace styleaug::data
