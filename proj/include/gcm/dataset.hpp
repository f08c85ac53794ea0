#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "gcm/error.hpp"

namespace gcm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// An i.i.d. sample split into X, Y and Z column blocks sharing n rows.
class DataSet {
public:
    DataSet() = default;

    DataSet(Matrix x, Matrix y, Matrix z) : x_(std::move(x)), y_(std::move(y)), z_(std::move(z)) {
        validate();
    }

    Eigen::Index n() const { return x_.rows(); }
    Eigen::Index dx() const { return x_.cols(); }
    Eigen::Index dy() const { return y_.cols(); }
    Eigen::Index dz() const { return z_.cols(); }

    const Matrix& x() const { return x_; }
    const Matrix& y() const { return y_; }
    const Matrix& z() const { return z_; }

    /// Same blocks with X and Y exchanged.
    DataSet swapped() const { return DataSet(y_, x_, z_); }

    /// Row subset, in the order given.
    DataSet rows(const std::vector<Eigen::Index>& index) const {
        return DataSet(x_(index, Eigen::all), y_(index, Eigen::all), z_(index, Eigen::all));
    }

private:
    void validate() const {
        detail::require(x_.rows() >= 2, "DataSet: need at least 2 rows");
        detail::require(y_.rows() == x_.rows() && z_.rows() == x_.rows(),
                        "DataSet: X, Y and Z blocks must have the same row count");
        detail::require(x_.cols() >= 1 && y_.cols() >= 1 && z_.cols() >= 1,
                        "DataSet: every block needs at least one column");
        detail::require(x_.allFinite() && y_.allFinite() && z_.allFinite(),
                        "DataSet: non-finite entry");
    }

    Matrix x_, y_, z_;
};

// ---------------------------------------------------------------------------
// CSV ingestion. The header names every column; the first character picks
// the block (x, y or z), e.g. "x1,y1,z1,z2".
// ---------------------------------------------------------------------------

class CsvError : public InvalidInput {
public:
    CsvError(std::size_t line, const std::string& what)
        : InvalidInput("line " + std::to_string(line) + ": " + what), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

inline std::vector<std::string_view> split_commas(std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t start = 0;
    for (;;) {
        const std::size_t comma = line.find(',', start);
        cells.push_back(trim(line.substr(start, comma - start)));
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return cells;
}

}  // namespace detail

inline DataSet read_csv(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::vector<char> block_of;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        for (auto name : detail::split_commas(line)) {
            if (name.empty()) throw CsvError(line_no, "empty column name");
            const char b = static_cast<char>(std::tolower(static_cast<unsigned char>(name.front())));
            if (b != 'x' && b != 'y' && b != 'z')
                throw CsvError(line_no, "column '" + std::string(name) +
                                            "' does not start with x, y or z");
            block_of.push_back(b);
        }
        break;
    }
    if (block_of.empty()) throw CsvError(line_no, "missing header row");
    for (char b : {'x', 'y', 'z'}) {
        if (std::find(block_of.begin(), block_of.end(), b) == block_of.end())
            throw CsvError(1, std::string("missing block: no column starting with '") + b + "'");
    }

    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        const auto cells = detail::split_commas(line);
        if (cells.size() != block_of.size())
            throw CsvError(line_no, "expected " + std::to_string(block_of.size()) + " fields, found " +
                                        std::to_string(cells.size()));
        std::vector<double> row(cells.size());
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const auto cell = cells[c];
            const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), row[c]);
            if (ec != std::errc() || ptr != cell.data() + cell.size() || !std::isfinite(row[c]))
                throw CsvError(line_no, "non-numeric cell '" + std::string(cell) + "' in column " +
                                            std::to_string(c + 1));
        }
        rows.push_back(std::move(row));
    }
    if (rows.size() < 2) throw CsvError(line_no, "need at least 2 data rows");

    auto count = [&](char b) { return std::count(block_of.begin(), block_of.end(), b); };
    const auto n = static_cast<Eigen::Index>(rows.size());
    Matrix x(n, count('x')), y(n, count('y')), z(n, count('z'));
    for (Eigen::Index i = 0; i < n; ++i) {
        Eigen::Index jx = 0, jy = 0, jz = 0;
        for (std::size_t c = 0; c < block_of.size(); ++c) {
            const double v = rows[static_cast<std::size_t>(i)][c];
            switch (block_of[c]) {
                case 'x': x(i, jx++) = v; break;
                case 'y': y(i, jy++) = v; break;
                default: z(i, jz++) = v; break;
            }
        }
    }
    return DataSet(std::move(x), std::move(y), std::move(z));
}

inline DataSet read_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    return read_csv(in);
}

/// Writes x1..,y1..,z1.. with round-trip precision.
inline void write_csv(std::ostream& out, const DataSet& data) {
    auto header = [&](char prefix, Eigen::Index cols, bool& first) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            out << (first ? "" : ",") << prefix << (j + 1);
            first = false;
        }
    };
    bool first = true;
    header('x', data.dx(), first);
    header('y', data.dy(), first);
    header('z', data.dz(), first);
    out << '\n' << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        bool first_cell = true;
        for (const Matrix* block : {&data.x(), &data.y(), &data.z()}) {
            for (Eigen::Index j = 0; j < block->cols(); ++j) {
                out << (first_cell ? "" : ",") << (*block)(i, j);
                first_cell = false;
            }
        }
        out << '\n';
    }
}

}  // namespace gcm
