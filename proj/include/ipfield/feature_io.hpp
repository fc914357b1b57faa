#pragma once

#include "ipfield/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>

namespace ipfield {

// Binary feature file layout (all integers little-endian):
//
//   offset  size   field
//   0       4      magic "IPFF"
//   4       4      version (uint32, currently 1)
//   8       4      flags (uint32, bit 0 = labels present)
//   12      8      N rows (uint64)
//   20      8      d columns (uint64)
//   28      4*N*d  float32 values, row-major
//   ...     4*N    int32 labels (only when bit 0 of flags is set)
//   ...     8      FNV-1a 64-bit hash of every preceding byte
inline constexpr char kFeatureMagic[4] = {'I', 'P', 'F', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 28;

class FeatureIoError : public std::runtime_error {
public:
    enum class Code {
        Io,
        BadMagic,
        UnsupportedVersion,
        ChecksumMismatch,
        Truncated,
        TrailingBytes,
        NonFinite,
        Malformed,
        Empty,
        Ragged,
        NonNumeric,
    };

    FeatureIoError(Code code, const std::string& what) : std::runtime_error(what), code_(code) {}
    Code code() const noexcept { return code_; }

private:
    Code code_;
};

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);

// Size in bytes of an IPFF file holding an N x d matrix.
std::uint64_t feature_file_size(std::uint64_t rows, std::uint64_t cols, bool with_labels);

void write_features(const FeatureMatrix& m, const std::filesystem::path& path);
FeatureMatrix read_features(const std::filesystem::path& path);

// Rectangular numeric CSV with a header row. A trailing column named
// `label` is read as integer labels; every other column is a feature.
FeatureMatrix read_csv_features(const std::filesystem::path& path);
void write_csv_features(const FeatureMatrix& m, const std::filesystem::path& path);

// Dispatches on the extension: `.csv` goes through the CSV reader, anything
// else is treated as IPFF.
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace ipfield
