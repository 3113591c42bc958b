#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "priorlens/image.hpp"

// Procedural imagery: a 10-class shape classification set for the teacher,
// and cluttered multi-object scenes used as sharp deblurring sources.
namespace priorlens::scenes {

inline constexpr int kNumShapeClasses = 10;

const char* shape_class_name(int cls);

struct ClassificationSet {
  std::vector<Image> images;
  std::vector<int> labels;
  int num_classes = kNumShapeClasses;
};

// Balanced: sample i has label i % num_classes.
ClassificationSet make_shape_classification_set(int count, int size, std::uint64_t seed,
                                                int num_classes = kNumShapeClasses);

Image render_shape_sample(int cls, int size, std::uint64_t seed);
Image render_scene(int height, int width, std::uint64_t seed);

// Writes `count` scenes as scene_XXXX.png under dir and returns their names.
std::vector<std::string> write_scenes(const std::string& dir, int count, int size, std::uint64_t seed);

}  // namespace priorlens::scenes
