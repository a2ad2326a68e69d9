#pragma once

#include <array>
#include <string>
#include <vector>

#include "styleaug/data/dataset.hpp"
#include "styleaug/rng.hpp"

namespace styleaug::corruptions {

enum class Kind { gaussian_noise, shot_noise, defocus_blur, motion_blur, fog, brightness, contrast, pixelate };
enum class Group { noise, blur, weather, digital };

inline constexpr std::array<Kind, 8> kAllKinds = {Kind::gaussian_noise, Kind::shot_noise, Kind::defocus_blur,
                                                  Kind::motion_blur,    Kind::fog,        Kind::brightness,
                                                  Kind::contrast,       Kind::pixelate};
inline constexpr std::array<Group, 4> kAllGroups = {Group::noise, Group::blur, Group::weather, Group::digital};
inline constexpr int kMaxSeverity = 5;

std::string to_string(Kind kind);
std::string to_string(Group group);
Kind parse_kind(const std::string& s);
Group group_of(Kind kind);

// Table value for (kind, severity 1..5):
//   gaussian_noise  sigma             .04 .08 .12 .16 .20
//   shot_noise      photons per unit  500 250 100  50  25
//   defocus_blur    disk radius px      1   2   3   4   6  (at 32x32, scaled by H/32)
//   motion_blur     kernel length px    3   5   7   9  13  (random angle per image)
//   fog             haze t            .15 .30 .45 .60 .75  x' = (1-t) x + t
//   brightness      additive shift     .1  .2  .3  .4  .5
//   contrast        scale toward mean .75  .6 .45  .3 .15
//   pixelate        downscale factor   .8 .65  .5  .4  .3  (then nearest upscale)
// These are declared defaults for this benchmark, not ImageNet-C constants.
double parameter(Kind kind, int severity);

struct CorruptionSpec {
  Kind kind = Kind::gaussian_noise;
  int severity = 1;  // 1..5; 0 is the identity sentinel

  Group group() const { return group_of(kind); }
  double param() const { return severity == 0 ? 0.0 : parameter(kind, severity); }
  std::string name() const { return to_string(kind) + "/" + std::to_string(severity); }
  // Stable small integer used to derive per-spec random streams.
  std::uint64_t id() const { return static_cast<std::uint64_t>(kind) * 16 + static_cast<std::uint64_t>(severity); }

  friend bool operator==(const CorruptionSpec&, const CorruptionSpec&) = default;
};

// Validates the severity range (0..5).
CorruptionSpec make_spec(Kind kind, int severity);

// All 8 kinds x 5 severities, kind-major in kAllKinds order.
std::vector<CorruptionSpec> corruption_suite();

// Corrupts [0,1] images in place of a copy; output clamped to [0,1].
// Draws from `rng` sample by sample.
Tensor corrupt01(const Tensor& images01, const CorruptionSpec& spec, Rng& rng);

// Normalized batch: denormalize, corrupt, clamp, renormalize.
data::ImageBatch corrupt(const data::ImageBatch& batch, const CorruptionSpec& spec, Rng& rng);

// Randomness derived per sample from (seed, spec, dataset index), so results
// do not depend on batch composition.
data::ImageBatch corrupt_indexed(const data::ImageBatch& batch, const CorruptionSpec& spec, std::uint64_t seed);

}  // namespace styleaug::corruptions
