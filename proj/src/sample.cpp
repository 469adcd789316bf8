#include "fedscope/sample.hpp"

namespace fedscope {

const char* domain_name(Domain d) {
    switch (d) {
        case Domain::real: return "real";
        case Domain::synthetic: return "synthetic";
        case Domain::unseen: return "unseen";
    }
    return "unknown";
}

}  // namespace fedscope
