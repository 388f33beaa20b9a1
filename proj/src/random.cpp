#include "gpdense/random.hpp"

#include <sstream>
#include <stdexcept>

namespace gpdense {

std::string rng_state(const Rng& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}

void restore_rng_state(Rng& rng, const std::string& state) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw std::runtime_error("corrupt rng state");
}

}  // namespace gpdense
