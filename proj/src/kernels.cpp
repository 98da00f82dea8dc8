#include "forge/kernels.hpp"

namespace forge::kernels {

Config& config() {
    thread_local Config cfg;
    return cfg;
}

} // namespace forge::kernels
