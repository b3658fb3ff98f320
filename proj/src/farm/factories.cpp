#include "farm/factories.hpp"

#include <mutex>

#include "farm/farm_manager.hpp"
#include "farm/hosts.hpp"
#include "farm/lm.hpp"
#include "farm/records.hpp"
#include "farm/staging.hpp"
#include "lpf/lpf.hpp"

namespace farm {

void register_farm_factories(lpf::Lpf& lpf) {
    static std::once_flag states_once;
    std::call_once(states_once, [] { register_farm_states(lpf::StateRegistry::global()); });

    lpf.register_factory("farm-manager", lpf::ModuleKind::Active,
                         [] { return std::make_unique<FarmManagerModule>(); });
    lpf.register_factory("staging", lpf::ModuleKind::Passive,
                         [] { return std::make_unique<StagingModule>(); });
    lpf.register_factory("bookkeeper", lpf::ModuleKind::Passive,
                         [] { return std::make_unique<BookkeeperModule>(); });
    lpf.register_factory("rp-host", lpf::ModuleKind::Active,
                         [] { return std::make_unique<RpHostModule>(); });
    lpf.register_factory("np-host", lpf::ModuleKind::Active,
                         [] { return std::make_unique<NpHostModule>(); });
    lpf.register_factory("lm-server", lpf::ModuleKind::Passive,
                         [] { return std::make_unique<LmModule>(); });
}

}  // namespace farm
