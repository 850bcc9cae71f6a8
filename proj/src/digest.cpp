#include "compartos/digest.hpp"

#include <iomanip>
#include <sstream>

namespace compartos {

std::string digest_hex(uint64_t h)
{
    std::ostringstream os;
    os << std::hex << std::setfill('0') << std::setw(16) << h;
    return os.str();
}

}  // namespace compartos
