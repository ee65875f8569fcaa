#include "skelsr/checkpoint.hpp"

#include <ostream>

namespace skelsr::ckpt {

std::string format(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

void write_reals(std::ostream& out, const std::vector<double>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) out << (i ? " " : "") << format(v[i]);
    out << '\n';
}

}  // namespace skelsr::ckpt
