#pragma once

#include "flowdistill/flow.hpp"

namespace testing_support {

/// Small teacher trained briefly on {-3, 3}. Built once per process.
inline const flowdistill::nn::VelocityModel& quick_teacher() {
  static const flowdistill::nn::VelocityModel teacher = [] {
    flowdistill::flow::TeacherTrainConfig cfg;
    cfg.arch = {1, 32, 2};
    cfg.iterations = 1500;
    cfg.batch_size = 256;
    cfg.lr = 3e-3;
    cfg.seed = 17;
    return flowdistill::flow::train_teacher(flowdistill::flow::ToyDataset::scalar({-3.0, 3.0}), cfg).model;
  }();
  return teacher;
}

}  // namespace testing_support
