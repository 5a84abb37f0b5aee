#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "convcrunch/approx.hpp"
#include "convcrunch/tensor.hpp"

namespace convcrunch {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Binary tensor file: 16-byte header (magic "CTNS", version u8, rank u8,
/// scalar-width u8, zero padding), little-endian u32 dims, then raw
/// little-endian scalars (width 4 or 8).
struct TensorFile {
  std::vector<std::uint32_t> dims;
  VectorX<double> data;
  int scalar_width = 8;
};

void write_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const double* data, int scalar_width = 8);
TensorFile read_tensor_file(const std::string& path);

void write_conv_tensor(const std::string& path, const ConvTensor<double>& w,
                       int scalar_width = 8);
ConvTensor<double> read_conv_tensor(const std::string& path);

void write_feature_map(const std::string& path, const FeatureMap<double>& m,
                       int scalar_width = 8);
FeatureMap<double> read_feature_map(const std::string& path);

void write_matrix(const std::string& path, const MatrixX<double>& m, int scalar_width = 8);
MatrixX<double> read_matrix(const std::string& path);

/// Compressed-model container: 16-byte header (magic "CCMP", version u8,
/// scheme u8, zero padding), little-endian u32 hyperparameters, u32 cluster
/// assignment arrays, then the factor tensors appended in the tensor format.
using CompressedConv =
    std::variant<MonochromaticApprox<double>, BiclusteredApprox<double>, FcSvdApprox<double>>;

void write_compressed(const std::string& path, const CompressedConv& model);
CompressedConv read_compressed(const std::string& path);

std::string compressed_scheme_name(const CompressedConv& model);

}  // namespace convcrunch
