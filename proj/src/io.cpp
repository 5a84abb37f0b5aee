#include "convcrunch/io.hpp"

#include <cstring>
#include <fstream>

namespace convcrunch {

namespace {

constexpr char kTensorMagic[4] = {'C', 'T', 'N', 'S'};
constexpr char kModelMagic[4] = {'C', 'C', 'M', 'P'};
constexpr std::uint8_t kFormatVersion = 1;

enum SchemeTag : std::uint8_t {
  kTagMonochromatic = 1,
  kTagBiclusteredSvd = 2,
  kTagBiclusteredOuter = 3,
  kTagFcSvd = 4,
};

void put_u32(std::string& buf, std::uint32_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
  buf.push_back(static_cast<char>((v >> 16) & 0xff));
  buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& path, std::string bytes) : path_(path), bytes_(std::move(bytes)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 8;
    return v;
  }

  void expect_magic(const char (&magic)[4], const char* what) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw IoError(path_ + ": not a " + what + " file (bad magic)");
    pos_ += 4;
  }

  void skip(size_t n) {
    need(n);
    pos_ += n;
  }

  bool done() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

 private:
  void need(size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError(path_ + ": truncated file");
  }

  std::string path_;
  std::string bytes_;
  size_t pos_ = 0;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path + ": cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

void spill(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path + ": cannot open for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path + ": write failed");
}

void append_tensor(std::string& buf, const std::vector<std::uint32_t>& dims, const double* data,
                   int scalar_width) {
  if (scalar_width != 4 && scalar_width != 8)
    throw IoError("tensor write: scalar width must be 4 or 8");
  buf.append(kTensorMagic, 4);
  buf.push_back(static_cast<char>(kFormatVersion));
  buf.push_back(static_cast<char>(dims.size()));
  buf.push_back(static_cast<char>(scalar_width));
  buf.append(9, '\0');
  std::uint64_t count = 1;
  for (std::uint32_t d : dims) {
    put_u32(buf, d);
    count *= d;
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    if (scalar_width == 8) {
      std::uint64_t bits;
      std::memcpy(&bits, &data[i], 8);
      put_u64(buf, bits);
    } else {
      const float f = static_cast<float>(data[i]);
      std::uint32_t bits;
      std::memcpy(&bits, &f, 4);
      put_u32(buf, bits);
    }
  }
}

TensorFile parse_tensor(Reader& r) {
  r.expect_magic(kTensorMagic, "tensor");
  const std::uint8_t version = r.u8();
  if (version != kFormatVersion)
    throw IoError(r.path() + ": unsupported tensor format version " + std::to_string(version));
  const std::uint8_t rank = r.u8();
  if (rank < 1 || rank > 8) throw IoError(r.path() + ": implausible tensor rank");
  const std::uint8_t width = r.u8();
  if (width != 4 && width != 8) throw IoError(r.path() + ": scalar width must be 4 or 8");
  r.skip(9);

  TensorFile tf;
  tf.scalar_width = width;
  std::uint64_t count = 1;
  for (int i = 0; i < rank; ++i) {
    const std::uint32_t d = r.u32();
    if (d == 0) throw IoError(r.path() + ": zero dimension");
    tf.dims.push_back(d);
    count *= d;
  }
  if (count > (std::uint64_t(1) << 32)) throw IoError(r.path() + ": tensor too large");
  tf.data.resize(static_cast<Index>(count));
  for (std::uint64_t i = 0; i < count; ++i) {
    if (width == 8) {
      const std::uint64_t bits = r.u64();
      double v;
      std::memcpy(&v, &bits, 8);
      tf.data[static_cast<Index>(i)] = v;
    } else {
      const std::uint32_t bits = r.u32();
      float v;
      std::memcpy(&v, &bits, 4);
      tf.data[static_cast<Index>(i)] = static_cast<double>(v);
    }
  }
  return tf;
}

void append_matrix(std::string& buf, const MatrixX<double>& m) {
  RowMajorMatrix<double> rm = m;
  append_tensor(buf, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                rm.data(), 8);
}

void append_vector(std::string& buf, const VectorX<double>& v) {
  append_tensor(buf, {static_cast<std::uint32_t>(v.size())}, v.data(), 8);
}

MatrixX<double> parse_matrix(Reader& r) {
  TensorFile tf = parse_tensor(r);
  if (tf.dims.size() != 2) throw IoError(r.path() + ": expected a rank-2 factor");
  return ConstMatrixView<double>(tf.data.data(), tf.dims[0], tf.dims[1]);
}

VectorX<double> parse_vector(Reader& r) {
  TensorFile tf = parse_tensor(r);
  if (tf.dims.size() != 1) throw IoError(r.path() + ": expected a rank-1 factor");
  return tf.data;
}

void append_svd_factors(std::string& buf, const SvdFactors<double>& f) {
  append_matrix(buf, f.u);
  append_vector(buf, f.s);
  append_matrix(buf, f.v);
  VectorX<double> head(1);
  head[0] = f.discarded_head;
  append_vector(buf, head);
}

SvdFactors<double> parse_svd_factors(Reader& r) {
  SvdFactors<double> f;
  f.u = parse_matrix(r);
  f.s = parse_vector(r);
  f.v = parse_matrix(r);
  VectorX<double> head = parse_vector(r);
  if (head.size() != 1) throw IoError(r.path() + ": malformed factor header");
  f.discarded_head = head[0];
  return f;
}

}  // namespace

void write_tensor_file(const std::string& path, const std::vector<std::uint32_t>& dims,
                       const double* data, int scalar_width) {
  if (dims.empty() || dims.size() > 8) throw IoError(path + ": rank must be in [1, 8]");
  std::string buf;
  append_tensor(buf, dims, data, scalar_width);
  spill(path, buf);
}

TensorFile read_tensor_file(const std::string& path) {
  Reader r(path, slurp(path));
  TensorFile tf = parse_tensor(r);
  if (!r.done()) throw IoError(path + ": trailing bytes after tensor data");
  return tf;
}

void write_conv_tensor(const std::string& path, const ConvTensor<double>& w, int scalar_width) {
  write_tensor_file(path,
                    {static_cast<std::uint32_t>(w.c_in()), static_cast<std::uint32_t>(w.kx()),
                     static_cast<std::uint32_t>(w.ky()), static_cast<std::uint32_t>(w.f_out())},
                    w.data().data(), scalar_width);
}

ConvTensor<double> read_conv_tensor(const std::string& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 4) throw IoError(path + ": expected a rank-4 weight tensor");
  return ConvTensor<double>(tf.dims[0], tf.dims[1], tf.dims[2], tf.dims[3], std::move(tf.data));
}

void write_feature_map(const std::string& path, const FeatureMap<double>& m, int scalar_width) {
  write_tensor_file(path,
                    {static_cast<std::uint32_t>(m.channels()), static_cast<std::uint32_t>(m.rows()),
                     static_cast<std::uint32_t>(m.cols())},
                    m.data().data(), scalar_width);
}

FeatureMap<double> read_feature_map(const std::string& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 3) throw IoError(path + ": expected a rank-3 feature map");
  return FeatureMap<double>(tf.dims[0], tf.dims[1], tf.dims[2], std::move(tf.data));
}

void write_matrix(const std::string& path, const MatrixX<double>& m, int scalar_width) {
  RowMajorMatrix<double> rm = m;
  write_tensor_file(path,
                    {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())},
                    rm.data(), scalar_width);
}

MatrixX<double> read_matrix(const std::string& path) {
  TensorFile tf = read_tensor_file(path);
  if (tf.dims.size() != 2) throw IoError(path + ": expected a rank-2 matrix");
  return ConstMatrixView<double>(tf.data.data(), tf.dims[0], tf.dims[1]);
}

// ---------------------------------------------------------------------------
// Compressed-model container
// ---------------------------------------------------------------------------

void write_compressed(const std::string& path, const CompressedConv& model) {
  std::string buf;
  buf.append(kModelMagic, 4);
  buf.push_back(static_cast<char>(kFormatVersion));

  if (std::holds_alternative<MonochromaticApprox<double>>(model)) {
    const auto& m = std::get<MonochromaticApprox<double>>(model);
    buf.push_back(static_cast<char>(kTagMonochromatic));
    buf.append(10, '\0');
    for (Index v : {m.c_in, m.kx, m.ky, m.f_out, m.num_colors})
      put_u32(buf, static_cast<std::uint32_t>(v));
    for (Index a : m.assignment) put_u32(buf, static_cast<std::uint32_t>(a));
    append_matrix(buf, m.color_basis);
    append_matrix(buf, MatrixX<double>(m.spatial));
  } else if (std::holds_alternative<BiclusteredApprox<double>>(model)) {
    const auto& b = std::get<BiclusteredApprox<double>>(model);
    const bool is_svd = b.options.kind == CellDecomp::kSvd;
    buf.push_back(static_cast<char>(is_svd ? kTagBiclusteredSvd : kTagBiclusteredOuter));
    buf.append(10, '\0');
    for (Index v : {b.c_in, b.kx, b.ky, b.f_out, b.g, b.h})
      put_u32(buf, static_cast<std::uint32_t>(v));
    if (is_svd) {
      put_u32(buf, static_cast<std::uint32_t>(b.options.k1));
      put_u32(buf, static_cast<std::uint32_t>(b.options.k2));
    } else {
      put_u32(buf, static_cast<std::uint32_t>(b.options.k));
    }
    put_u32(buf, b.options.distance == DistanceMode::kEuclidean ? 0 : 1);
    // Cluster assignments, one u32 per channel then one per feature.
    std::vector<std::uint32_t> channel_of(b.c_in), feature_of(b.f_out);
    for (Index i = 0; i < b.g; ++i)
      for (Index c : b.input_clusters[i]) channel_of[c] = static_cast<std::uint32_t>(i);
    for (Index j = 0; j < b.h; ++j)
      for (Index f : b.output_clusters[j]) feature_of[f] = static_cast<std::uint32_t>(j);
    for (std::uint32_t v : channel_of) put_u32(buf, v);
    for (std::uint32_t v : feature_of) put_u32(buf, v);
    for (const auto& cell : b.cells) {
      if (is_svd) {
        const auto& ts = std::get<TwoStageSvd<double>>(cell);
        append_svd_factors(buf, ts.outer);
        append_svd_factors(buf, ts.inner);
      } else {
        const auto& op = std::get<OuterProductDecomp<double>>(cell);
        for (const auto& f : op.factors) {
          append_vector(buf, f.alpha);
          append_vector(buf, f.beta);
          append_vector(buf, f.gamma);
        }
        append_vector(buf, op.residual_norms);
      }
    }
  } else {
    const auto& fc = std::get<FcSvdApprox<double>>(model);
    buf.push_back(static_cast<char>(kTagFcSvd));
    buf.append(10, '\0');
    put_u32(buf, static_cast<std::uint32_t>(fc.left.rows()));
    put_u32(buf, static_cast<std::uint32_t>(fc.right.cols()));
    put_u32(buf, static_cast<std::uint32_t>(fc.rank));
    append_matrix(buf, fc.left);
    append_matrix(buf, fc.right);
  }
  spill(path, buf);
}

CompressedConv read_compressed(const std::string& path) {
  Reader r(path, slurp(path));
  r.expect_magic(kModelMagic, "compressed model");
  const std::uint8_t version = r.u8();
  if (version != kFormatVersion)
    throw IoError(path + ": unsupported container version " + std::to_string(version));
  const std::uint8_t tag = r.u8();
  r.skip(10);

  if (tag == kTagMonochromatic) {
    MonochromaticApprox<double> m;
    m.c_in = r.u32();
    m.kx = r.u32();
    m.ky = r.u32();
    m.f_out = r.u32();
    m.num_colors = r.u32();
    m.assignment.resize(m.f_out);
    for (Index i = 0; i < m.f_out; ++i) m.assignment[i] = r.u32();
    m.color_basis = parse_matrix(r);
    m.spatial = parse_matrix(r);
    if (m.color_basis.rows() != m.num_colors || m.color_basis.cols() != m.c_in ||
        m.spatial.rows() != m.f_out || m.spatial.cols() != m.kx * m.ky)
      throw IoError(path + ": factor shapes inconsistent with header");
    if (!r.done()) throw IoError(path + ": trailing bytes");
    return m;
  }

  if (tag == kTagBiclusteredSvd || tag == kTagBiclusteredOuter) {
    BiclusteredApprox<double> b;
    b.c_in = r.u32();
    b.kx = r.u32();
    b.ky = r.u32();
    b.f_out = r.u32();
    b.g = r.u32();
    b.h = r.u32();
    if (tag == kTagBiclusteredSvd) {
      b.options.kind = CellDecomp::kSvd;
      b.options.k1 = r.u32();
      b.options.k2 = r.u32();
    } else {
      b.options.kind = CellDecomp::kOuterProduct;
      b.options.k = r.u32();
    }
    b.options.distance = r.u32() == 0 ? DistanceMode::kEuclidean : DistanceMode::kSubspaceProjection;
    b.input_clusters.assign(b.g, {});
    b.output_clusters.assign(b.h, {});
    for (Index c = 0; c < b.c_in; ++c) {
      const std::uint32_t cluster = r.u32();
      if (cluster >= static_cast<std::uint32_t>(b.g)) throw IoError(path + ": bad cluster index");
      b.input_clusters[cluster].push_back(c);
    }
    for (Index f = 0; f < b.f_out; ++f) {
      const std::uint32_t cluster = r.u32();
      if (cluster >= static_cast<std::uint32_t>(b.h)) throw IoError(path + ": bad cluster index");
      b.output_clusters[cluster].push_back(f);
    }
    const Index d0 = b.c_in / b.g, d1 = b.kx * b.ky, d2 = b.f_out / b.h;
    for (Index i = 0; i < b.g; ++i) {
      if (static_cast<Index>(b.input_clusters[i].size()) != d0)
        throw IoError(path + ": unbalanced input clusters");
    }
    for (Index j = 0; j < b.h; ++j) {
      if (static_cast<Index>(b.output_clusters[j].size()) != d2)
        throw IoError(path + ": unbalanced output clusters");
    }
    for (Index cell = 0; cell < b.g * b.h; ++cell) {
      if (tag == kTagBiclusteredSvd) {
        TwoStageSvd<double> ts;
        ts.d0 = d0;
        ts.d1 = d1;
        ts.d2 = d2;
        ts.k1 = b.options.k1;
        ts.k2 = b.options.k2;
        ts.outer = parse_svd_factors(r);
        ts.inner = parse_svd_factors(r);
        b.cells.emplace_back(std::move(ts));
      } else {
        OuterProductDecomp<double> op;
        op.d0 = d0;
        op.d1 = d1;
        op.d2 = d2;
        op.rank = b.options.k;
        for (Index k = 0; k < op.rank; ++k) {
          OuterProductDecomp<double>::Factor f;
          f.alpha = parse_vector(r);
          f.beta = parse_vector(r);
          f.gamma = parse_vector(r);
          op.factors.push_back(std::move(f));
        }
        op.residual_norms = parse_vector(r);
        b.cells.emplace_back(std::move(op));
      }
    }
    if (!r.done()) throw IoError(path + ": trailing bytes");
    return b;
  }

  if (tag == kTagFcSvd) {
    FcSvdApprox<double> fc;
    const std::uint32_t n = r.u32();
    const std::uint32_t m = r.u32();
    fc.rank = r.u32();
    fc.left = parse_matrix(r);
    fc.right = parse_matrix(r);
    if (fc.left.rows() != static_cast<Index>(n) || fc.right.cols() != static_cast<Index>(m) ||
        fc.left.cols() != fc.rank || fc.right.rows() != fc.rank)
      throw IoError(path + ": factor shapes inconsistent with header");
    if (!r.done()) throw IoError(path + ": trailing bytes");
    return fc;
  }

  throw IoError(path + ": unknown scheme tag " + std::to_string(tag));
}

std::string compressed_scheme_name(const CompressedConv& model) {
  if (std::holds_alternative<MonochromaticApprox<double>>(model)) return "monochromatic";
  if (std::holds_alternative<FcSvdApprox<double>>(model)) return "fc-svd";
  const auto& b = std::get<BiclusteredApprox<double>>(model);
  return b.options.kind == CellDecomp::kSvd ? "bicluster-svd" : "bicluster-outer";
}

}  // namespace convcrunch
