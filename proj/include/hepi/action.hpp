#pragma once

#include "hepi/geometry.hpp"

namespace hepi {

// Per-actuator command. w stays zero for tasks without an angular slot, and
// tasks ignore the components their dynamics do not use.
struct ActCommand {
  Vec3 v{0, 0, 0};
  Vec3 w{0, 0, 0};
};

}  // namespace hepi
