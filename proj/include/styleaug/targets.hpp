#pragma once

namespace styleaug {

// Soft classification target: weight `lambda` on label_a and 1 - lambda on
// label_b. A plain label is {y, y, 1}.
struct MixTarget {
  int label_a = 0;
  int label_b = 0;
  float lambda = 1.0f;

  static MixTarget hard(int label) { return {label, label, 1.0f}; }

  friend bool operator==(const MixTarget&, const MixTarget&) = default;
};

}  // namespace styleaug
