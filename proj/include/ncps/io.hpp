#pragma once

// CSV and binary batch serialization.

#include "ncps/error.hpp"
#include "ncps/linalg.hpp"
#include "ncps/sde.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <concepts>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace ncps {

/// Shortest text that round-trips to the same double.
inline std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

class CsvWriter {
public:
    explicit CsvWriter(std::ostream& os) : os_(&os) {}

    CsvWriter& header(const std::vector<std::string>& cols) {
        first_ = true;
        for (const auto& c : cols) cell(c);
        return end();
    }
    /// Fields holding a comma, quote or newline are quoted with doubled inner quotes.
    CsvWriter& cell(std::string_view s) {
        if (!first_) *os_ << ',';
        if (s.find_first_of(",\"\n") == std::string_view::npos) {
            *os_ << s;
        } else {
            *os_ << '"';
            for (char c : s) {
                if (c == '"') *os_ << '"';
                *os_ << c;
            }
            *os_ << '"';
        }
        first_ = false;
        return *this;
    }
    CsvWriter& cell(double v) { return cell(fmt(v)); }
    template <std::integral T>
    CsvWriter& cell(T v) {
        return cell(std::string_view(std::to_string(v)));
    }
    CsvWriter& end() {
        *os_ << '\n';
        first_ = true;
        return *this;
    }

private:
    std::ostream* os_;
    bool first_ = true;
};

/// Inverse of CsvWriter for one line.
inline std::vector<std::string> split_csv_row(std::string_view line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                out.back() += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                out.back() += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else {
            out.back() += c;
        }
    }
    if (quoted) throw Error(ErrorKind::IoError, "unterminated quoted CSV field");
    return out;
}

inline std::vector<std::string> coordinate_columns(std::string first, Eigen::Index d) {
    std::vector<std::string> cols{std::move(first)};
    for (Eigen::Index i = 1; i <= d; ++i) cols.push_back("x" + std::to_string(i));
    return cols;
}

/// Header `t,x1,...,xd`, one row per grid node.
inline void write_path_csv(std::ostream& os, const Path& path) {
    CsvWriter w(os);
    w.header(coordinate_columns("t", path.dim()));
    for (Eigen::Index k = 0; k < path.states.rows(); ++k) {
        w.cell(path.times[k]);
        for (Eigen::Index i = 0; i < path.dim(); ++i) w.cell(path.states(k, i));
        w.end();
    }
}

inline constexpr std::array<char, 8> kBatchMagic{'N', 'C', 'P', 'S', 'I', 'M', '0', '1'};

namespace detail {

inline void put_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t get_u64(std::istream& is) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8)) throw Error(ErrorKind::IoError, "truncated batch file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

}  // namespace detail

/// Layout: magic `NCPSIM01`, uint64 rows, uint64 cols, then rows*cols little-endian
/// float64 values in row-major order.
inline void write_batch(std::ostream& os, const RowMatrix& m) {
    os.write(kBatchMagic.data(), kBatchMagic.size());
    detail::put_u64(os, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(os, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) detail::put_u64(os, std::bit_cast<std::uint64_t>(m.data()[k]));
    if (!os) throw Error(ErrorKind::IoError, "failed writing batch");
}

inline RowMatrix read_batch(std::istream& is) {
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kBatchMagic)
        throw Error(ErrorKind::IoError, "not an NCPSIM01 batch");
    const auto rows = detail::get_u64(is);
    const auto cols = detail::get_u64(is);
    RowMatrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = std::bit_cast<double>(detail::get_u64(is));
    return m;
}

inline std::ofstream open_output(const std::string& path, bool binary = false) {
    std::ofstream os(path, binary ? std::ios::binary : std::ios::out);
    if (!os) throw Error(ErrorKind::IoError, "cannot open " + path + " for writing");
    return os;
}

}  // namespace ncps
