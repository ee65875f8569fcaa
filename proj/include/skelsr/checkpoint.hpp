#pragma once
// Errors and helpers shared by the model checkpoint readers/writers.

#include <charconv>
#include <istream>
#include <stdexcept>
#include <string>
#include <vector>

namespace skelsr {

class VersionError : public std::runtime_error {
public:
    VersionError(const std::string& what, int found, int expected)
        : std::runtime_error(what + ": version " + std::to_string(found) + ", expected " + std::to_string(expected)),
          found(found), expected(expected) {}
    int found;
    int expected;
};

class CorruptCheckpoint : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace ckpt {

/// Whitespace-separated token reader that throws CorruptCheckpoint on EOF
/// or malformed numbers.
class Reader {
public:
    explicit Reader(std::istream& in) : in_(in) {}

    std::string word() {
        std::string w;
        if (!(in_ >> w)) throw CorruptCheckpoint("unexpected end of checkpoint");
        return w;
    }
    void expect(const std::string& w) {
        std::string got = word();
        if (got != w) throw CorruptCheckpoint("expected '" + w + "', found '" + got + "'");
    }
    long long integer() {
        std::string w = word();
        long long v = 0;
        auto r = std::from_chars(w.data(), w.data() + w.size(), v);
        if (r.ec != std::errc() || r.ptr != w.data() + w.size()) throw CorruptCheckpoint("bad integer '" + w + "'");
        return v;
    }
    double real() {
        std::string w = word();
        double v = 0;
        auto r = std::from_chars(w.data(), w.data() + w.size(), v);
        if (r.ec != std::errc() || r.ptr != w.data() + w.size()) throw CorruptCheckpoint("bad number '" + w + "'");
        return v;
    }
    void reals(std::vector<double>& out, std::size_t n) {
        out.resize(n);
        for (auto& v : out) v = real();
    }

private:
    std::istream& in_;
};

/// Shortest round-trip representation.
std::string format(double v);
void write_reals(std::ostream& out, const std::vector<double>& v);

}  // namespace ckpt

}  // namespace skelsr
