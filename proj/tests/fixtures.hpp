#pragma once

#include "priorlens/rng.hpp"
#include "priorlens/scenes.hpp"
#include "priorlens/teacher.hpp"

namespace testing_support {

struct TeacherFixture {
  priorlens::teacher::TeacherModel model;
  double heldout_accuracy;
};

// Teacher trained once per process with the tool's default recipe:
// 2000 training and 500 held-out 32 px shape samples, default config.
inline const TeacherFixture& trained_teacher() {
  static const TeacherFixture fixture = [] {
    namespace pl = priorlens;
    const auto train = pl::scenes::make_shape_classification_set(2000, 32, pl::mix_seed(0, 100));
    const auto held = pl::scenes::make_shape_classification_set(500, 32, pl::mix_seed(0, 200));
    auto result = pl::teacher::train_teacher(train, held, pl::teacher::TeacherTrainConfig{});
    return TeacherFixture{std::move(result.model), result.heldout_accuracy};
  }();
  return fixture;
}

}  // namespace testing_support
