#pragma once

namespace lpf {
class Lpf;
}

namespace farm {

/// Registers the farm module factories (farm-manager, staging, bookkeeper,
/// rp-host, np-host, lm-server) and installs the rp.*/np.* state
/// implementations into the global FSM registry.
void register_farm_factories(lpf::Lpf& lpf);

}  // namespace farm
