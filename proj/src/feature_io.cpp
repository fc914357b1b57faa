#include "ipfield/feature_io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <limits>
#include <sstream>
#include <string_view>
#include <vector>

namespace ipfield {

using Code = FeatureIoError::Code;

void validate(const FeatureMatrix& m) {
    if (m.rows() < 1 || m.cols() < 1) throw std::invalid_argument("feature matrix is empty");
    if (!all_finite(m.data)) throw std::invalid_argument("feature matrix has non-finite values");
    if (m.labels && static_cast<Eigen::Index>(m.labels->size()) != m.rows())
        throw std::invalid_argument("label count does not match row count");
}

bool all_finite(const RowMatrix& m) { return m.allFinite(); }

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        hash ^= b;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

std::uint64_t feature_file_size(std::uint64_t rows, std::uint64_t cols, bool with_labels) {
    return kFeatureHeaderBytes + 4 * rows * cols + (with_labels ? 4 * rows : 0) + 8;
}

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& buf, T value) {
    using U = std::make_unsigned_t<T>;
    auto u = static_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
    using U = std::make_unsigned_t<T>;
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(p[i]) << (8 * i);
    return static_cast<T>(u);
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FeatureIoError(Code::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

}  // namespace

void write_features(const FeatureMatrix& m, const std::filesystem::path& path) {
    validate(m);
    const auto rows = static_cast<std::uint64_t>(m.rows());
    const auto cols = static_cast<std::uint64_t>(m.cols());
    const bool with_labels = m.labels.has_value();

    std::vector<std::uint8_t> buf;
    buf.reserve(feature_file_size(rows, cols, with_labels));
    buf.insert(buf.end(), std::begin(kFeatureMagic), std::end(kFeatureMagic));
    put_le<std::uint32_t>(buf, kFeatureVersion);
    put_le<std::uint32_t>(buf, with_labels ? 1u : 0u);
    put_le<std::uint64_t>(buf, rows);
    put_le<std::uint64_t>(buf, cols);
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            put_le<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(static_cast<float>(m.data(i, j))));
    if (with_labels)
        for (int label : *m.labels) put_le<std::int32_t>(buf, label);
    put_le<std::uint64_t>(buf, fnv1a64(buf));

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FeatureIoError(Code::Io, "cannot open " + path.string() + " for writing");
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!os) throw FeatureIoError(Code::Io, "write failed: " + path.string());
}

FeatureMatrix read_features(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> buf = slurp(path);
    const std::string name = path.string();
    if (buf.size() < sizeof(kFeatureMagic))
        throw FeatureIoError(Code::Truncated, name + ": truncated header");
    if (std::memcmp(buf.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0)
        throw FeatureIoError(Code::BadMagic, name + ": not an IPFF file");
    if (buf.size() < kFeatureHeaderBytes)
        throw FeatureIoError(Code::Truncated, name + ": truncated header");
    const auto version = get_le<std::uint32_t>(buf.data() + 4);
    if (version != kFeatureVersion)
        throw FeatureIoError(Code::UnsupportedVersion,
                             name + ": unsupported version " + std::to_string(version));
    const auto flags = get_le<std::uint32_t>(buf.data() + 8);
    if ((flags & ~1u) != 0) throw FeatureIoError(Code::Malformed, name + ": unknown flag bits");
    const bool with_labels = (flags & 1u) != 0;
    const auto rows = get_le<std::uint64_t>(buf.data() + 12);
    const auto cols = get_le<std::uint64_t>(buf.data() + 20);
    if (rows == 0 || cols == 0) throw FeatureIoError(Code::Malformed, name + ": empty matrix");
    constexpr std::uint64_t kLimit = std::numeric_limits<std::uint64_t>::max() / 16;
    if (rows > kLimit || cols > kLimit || rows > kLimit / cols)
        throw FeatureIoError(Code::Malformed, name + ": implausible dimensions");

    const std::uint64_t expected = feature_file_size(rows, cols, with_labels);
    if (buf.size() < expected) throw FeatureIoError(Code::Truncated, name + ": truncated payload");
    if (buf.size() > expected)
        throw FeatureIoError(Code::TrailingBytes, name + ": unexpected bytes after checksum");
    const std::size_t body = expected - 8;
    if (fnv1a64({buf.data(), body}) != get_le<std::uint64_t>(buf.data() + body))
        throw FeatureIoError(Code::ChecksumMismatch, name + ": checksum mismatch");

    FeatureMatrix out;
    out.data.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const std::uint8_t* p = buf.data() + kFeatureHeaderBytes;
    for (Eigen::Index i = 0; i < out.data.rows(); ++i) {
        for (Eigen::Index j = 0; j < out.data.cols(); ++j, p += 4) {
            const float v = std::bit_cast<float>(get_le<std::uint32_t>(p));
            if (!std::isfinite(v))
                throw FeatureIoError(Code::NonFinite, name + ": non-finite value at row " +
                                                          std::to_string(i));
            out.data(i, j) = v;
        }
    }
    if (with_labels) {
        std::vector<int> labels(rows);
        for (auto& l : labels) {
            l = get_le<std::int32_t>(p);
            p += 4;
        }
        out.labels = std::move(labels);
    }
    out.source_tag = path.filename().string();
    return out;
}

FeatureMatrix read_csv_features(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw FeatureIoError(Code::Io, "cannot open " + path.string());
    const std::string name = path.string();

    std::string line;
    if (!std::getline(is, line)) throw FeatureIoError(Code::Empty, name + ": empty file");
    const auto header = split(trim(line), ',');
    const bool with_labels = trim(header.back()) == "label";
    const std::size_t width = header.size() - (with_labels ? 1 : 0);
    if (width == 0) throw FeatureIoError(Code::Malformed, name + ": no feature columns");

    std::vector<double> values;
    std::vector<int> labels;
    std::size_t rows = 0;
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string_view content = trim(line);
        if (content.empty()) continue;
        const auto cells = split(content, ',');
        if (cells.size() != header.size())
            throw FeatureIoError(Code::Ragged, name + ":" + std::to_string(line_no) + ": expected " +
                                                   std::to_string(header.size()) + " cells");
        for (std::size_t c = 0; c < cells.size(); ++c) {
            const std::string_view cell = trim(cells[c]);
            const char* end = cell.data() + cell.size();
            if (with_labels && c + 1 == cells.size()) {
                int label = 0;
                auto [ptr, ec] = std::from_chars(cell.data(), end, label);
                if (ec != std::errc() || ptr != end || cell.empty())
                    throw FeatureIoError(Code::NonNumeric, name + ":" + std::to_string(line_no) +
                                                               ": bad label '" + std::string(cell) + "'");
                labels.push_back(label);
            } else {
                double v = 0.0;
                auto [ptr, ec] = std::from_chars(cell.data(), end, v);
                if (ec != std::errc() || ptr != end || cell.empty())
                    throw FeatureIoError(Code::NonNumeric, name + ":" + std::to_string(line_no) +
                                                               ": bad number '" + std::string(cell) + "'");
                if (!std::isfinite(v))
                    throw FeatureIoError(Code::NonFinite, name + ":" + std::to_string(line_no) +
                                                              ": non-finite value");
                values.push_back(v);
            }
        }
        ++rows;
    }
    if (rows == 0) throw FeatureIoError(Code::Empty, name + ": no data rows");

    FeatureMatrix out;
    out.data = Eigen::Map<const RowMatrix>(values.data(), static_cast<Eigen::Index>(rows),
                                           static_cast<Eigen::Index>(width));
    if (with_labels) out.labels = std::move(labels);
    out.source_tag = path.filename().string();
    return out;
}

void write_csv_features(const FeatureMatrix& m, const std::filesystem::path& path) {
    validate(m);
    std::ofstream os(path);
    if (!os) throw FeatureIoError(Code::Io, "cannot open " + path.string() + " for writing");
    for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << 'f' << j;
    if (m.labels) os << ",label";
    os << '\n' << std::setprecision(17);
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << m.data(i, j);
        if (m.labels) os << ',' << (*m.labels)[i];
        os << '\n';
    }
    if (!os) throw FeatureIoError(Code::Io, "write failed: " + path.string());
}

FeatureMatrix load_features(const std::filesystem::path& path) {
    if (path.extension() == ".csv") return read_csv_features(path);
    return read_features(path);
}

}  // namespace ipfield
