#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sfxgan/tensor.hpp"

namespace sfxgan {

inline constexpr double kAdamBeta1 = 0.5;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEps = 1e-8;

struct TrainConfig {
  int num_stages = 10;
  int iters_per_stage = 2000;
  int filters = 64;
  int d2_dilation = 3;
  int min_size = 50;
  double lr = 0.0005;
  double lr_scale_lower = 0.1;
  int concurrent_stages = 3;
  double rec_weight = 10.0;
  double gp_weight = 10.0;
  int d_steps = 3;
  int g_steps = 3;
  int d2_start_stage = -1;  // -1: floor(num_stages / 2)
  uint64_t seed = 0;
  double feature_upsample_margin = 0.1;

  int resolved_d2_start() const {
    return d2_start_stage >= 0 ? d2_start_stage : num_stages / 2;
  }

  void validate() const {
    if (num_stages < 2) throw ValidationError("num_stages must be >= 2");
    if (iters_per_stage < 1) throw ValidationError("iters_per_stage must be >= 1");
    if (filters < 1) throw ValidationError("filters must be >= 1");
    if (d2_dilation < 1) throw ValidationError("d2_dilation must be >= 1");
    if (min_size < 1) throw ValidationError("min_size must be >= 1");
    if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
    if (!(lr_scale_lower > 0.0)) throw ValidationError("lr_scale_lower must be > 0");
    if (concurrent_stages < 1 || concurrent_stages > num_stages)
      throw ValidationError("concurrent_stages must be in [1, num_stages]");
    if (!(rec_weight >= 0.0)) throw ValidationError("rec_weight must be >= 0");
    if (!(gp_weight >= 0.0)) throw ValidationError("gp_weight must be >= 0");
    if (d_steps < 1 || g_steps < 1) throw ValidationError("d_steps/g_steps must be >= 1");
    if (resolved_d2_start() < 0 || resolved_d2_start() > num_stages)
      throw ValidationError("d2_start_stage must be in [0, num_stages]");
    if (feature_upsample_margin < 0.0)
      throw ValidationError("feature_upsample_margin must be >= 0");
  }
};

struct SynthesisParams {
  int num_variations = 10;
  double retarget_fraction = 0.15;
  bool shuffle_layers = true;
  double delay_ms_lo = 0.0, delay_ms_hi = 30.0;
  double gain_db_lo = -3.0, gain_db_hi = 0.0;
  int gl_iters = 60;
  uint64_t seed = 0;
  bool use_fixed_noise = false;  // reconstruction-path regression knob

  void validate() const {
    if (num_variations < 1) throw ValidationError("num_variations must be >= 1");
    if (retarget_fraction < 0.0)
      throw ValidationError("retarget_fraction must be >= 0");
    if (delay_ms_lo < 0.0 || delay_ms_hi < delay_ms_lo)
      throw ValidationError("delay range must satisfy 0 <= lo <= hi");
    if (gain_db_hi < gain_db_lo) throw ValidationError("gain range must satisfy lo <= hi");
    if (gl_iters < 0) throw ValidationError("gl_iters must be >= 0");
    if (use_fixed_noise && retarget_fraction != 0.0)
      throw ValidationError("use_fixed_noise requires retarget_fraction = 0");
  }
};

struct LossRow {
  int iteration = 0;  // within the stage
  int stage = 0;
  double d_loss = 0.0;
  double g_adv = 0.0;
  double rec = 0.0;
};

}  // namespace sfxgan
