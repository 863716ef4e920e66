#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "advloop/core/error.hpp"

namespace advloop {

/// One-way link impairment. Jitter is uniform in [-jitter, +jitter].
struct NetworkCondition {
  double delay_ms = 0.0;
  double jitter_ms = 0.0;
  double loss_prob = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(delay_ms >= 0.0 && std::isfinite(delay_ms)))
      fail(ErrorKind::invalid_config, "network: delay_ms must be >= 0");
    if (!(jitter_ms >= 0.0 && jitter_ms <= delay_ms))
      fail(ErrorKind::invalid_config, "network: jitter_ms must be in [0, delay_ms]");
    if (!(loss_prob >= 0.0 && loss_prob <= 1.0)) fail(ErrorKind::invalid_config, "network: loss_prob must be in [0, 1]");
  }

  std::int64_t delay_us() const { return std::llround(delay_ms * 1000.0); }
  std::int64_t jitter_us() const { return std::llround(jitter_ms * 1000.0); }

  friend bool operator==(const NetworkCondition&, const NetworkCondition&) = default;
};

enum class StageKind { reconnaissance, discovery, impact };

inline const char* stage_name(StageKind k) {
  switch (k) {
    case StageKind::reconnaissance: return "reconnaissance";
    case StageKind::discovery: return "discovery";
    case StageKind::impact: return "impact";
  }
  return "?";
}

struct AdversaryStage {
  StageKind kind = StageKind::reconnaissance;
  double time_s = 0.0;
  std::string note;
};

/// Staged network adversary. Only the impact stage changes behaviour: from
/// its onset the links run under `impact_condition` (delay, jitter, loss; the
/// seed of each link is kept). The other stages are log entries.
struct AdversaryScenario {
  std::vector<AdversaryStage> stages;
  NetworkCondition impact_condition;

  void validate() const {
    int impacts = 0;
    for (std::size_t i = 0; i < stages.size(); ++i) {
      if (i > 0 && stages[i].time_s < stages[i - 1].time_s)
        fail(ErrorKind::invalid_config, "scenario: stages must be ordered by time");
      if (stages[i].kind == StageKind::impact) ++impacts;
    }
    if (impacts > 1) fail(ErrorKind::invalid_config, "scenario: at most one impact stage");
    impact_condition.validate();
  }

  /// Time of the impact stage, or a negative value if there is none.
  double impact_time() const {
    for (const auto& s : stages)
      if (s.kind == StageKind::impact) return s.time_s;
    return -1.0;
  }

  /// Condition in force at `t` for a link whose normal condition is `base`.
  NetworkCondition condition_at(const NetworkCondition& base, double t) const {
    const double ti = impact_time();
    if (ti < 0.0 || t < ti) return base;
    NetworkCondition c = impact_condition;
    c.seed = base.seed;
    return c;
  }
};

}  // namespace advloop
