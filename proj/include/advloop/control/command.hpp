#pragma once

#include <cstdint>

namespace advloop {

/// Velocity command sent from the cloud to the vehicle.
struct ControlCommand {
  double v = 0.0;      // m/s
  double omega = 0.0;  // rad/s, positive = counter-clockwise
  std::uint32_t seq = 0;

  friend bool operator==(const ControlCommand&, const ControlCommand&) = default;
};

}  // namespace advloop
