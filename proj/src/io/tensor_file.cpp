#include "spacy/io/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace spacy::io {
namespace {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

constexpr std::size_t kFixedHeader = 16;  // magic, version, dtype, ndim

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  std::uint8_t buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.insert(out.end(), buf, buf + sizeof(T));
}

template <class T>
T get(const std::uint8_t* p) {
  T v;
  std::memcpy(&v, p, sizeof(T));
  return v;
}

std::size_t dtype_size(std::uint32_t code) {
  if (code == static_cast<std::uint32_t>(Dtype::kFloat32)) return 4;
  if (code == static_cast<std::uint32_t>(Dtype::kFloat64)) return 8;
  throw FormatError("unknown dtype code " + std::to_string(code));
}

struct Header {
  std::uint32_t dtype;
  ad::Shape shape;
  std::size_t header_bytes;
  std::size_t payload_bytes;
};

// Parses the header from the first bytes of a file of `total` bytes.
Header parse_header(const std::uint8_t* p, std::size_t avail, std::uint64_t total) {
  if (avail < kFixedHeader) throw FormatError("truncated tensor header");
  if (std::memcmp(p, kTensorMagic, 4) != 0) throw FormatError("bad magic: not a SPCY tensor file");
  const auto version = get<std::uint32_t>(p + 4);
  if (version != kTensorVersion) throw FormatError("unsupported tensor format version " + std::to_string(version));
  Header h;
  h.dtype = get<std::uint32_t>(p + 8);
  const std::size_t elem = dtype_size(h.dtype);
  const auto ndim = get<std::uint32_t>(p + 12);
  if (ndim == 0 || ndim > 32) throw FormatError("invalid tensor rank " + std::to_string(ndim));
  h.header_bytes = kFixedHeader + 8 * static_cast<std::size_t>(ndim);
  if (avail < h.header_bytes) throw FormatError("truncated tensor header");
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    const auto d = get<std::uint64_t>(p + kFixedHeader + 8 * i);
    if (d == 0) throw FormatError("zero tensor extent");
    if (count > std::numeric_limits<std::uint64_t>::max() / d / elem) throw FormatError("tensor dims overflow");
    count *= d;
    h.shape.push_back(static_cast<std::size_t>(d));
  }
  h.payload_bytes = static_cast<std::size_t>(count * elem);
  if (total != h.header_bytes + h.payload_bytes) throw FormatError("tensor payload length does not match its header");
  return h;
}

void fill_payload(ad::Tensor& t, std::uint32_t dtype, const std::uint8_t* p) {
  auto data = t.data();
  if (dtype == static_cast<std::uint32_t>(Dtype::kFloat64)) {
    std::memcpy(data.data(), p, data.size() * 8);
  } else {
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<double>(get<float>(p + 4 * i));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_tensor(const ad::Tensor& t, Dtype dtype) {
  std::vector<std::uint8_t> out(kTensorMagic, kTensorMagic + 4);
  put<std::uint32_t>(out, kTensorVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(dtype));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put<std::uint64_t>(out, d);
  const auto data = t.data();
  if (dtype == Dtype::kFloat64) {
    const auto* raw = reinterpret_cast<const std::uint8_t*>(data.data());
    out.insert(out.end(), raw, raw + data.size() * 8);
  } else {
    for (double v : data) put<float>(out, static_cast<float>(v));
  }
  return out;
}

ad::Tensor decode_tensor(const std::vector<std::uint8_t>& bytes) {
  const Header h = parse_header(bytes.data(), bytes.size(), bytes.size());
  ad::Tensor t(h.shape);
  fill_payload(t, h.dtype, bytes.data() + h.header_bytes);
  return t;
}

void write_tensor(const std::filesystem::path& path, const ad::Tensor& t, Dtype dtype) {
  const auto bytes = encode_tensor(t, dtype);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("short write to '" + path.string() + "'");
}

ad::Tensor read_tensor(const std::filesystem::path& path) {
  std::error_code ec;
  const auto total = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("cannot stat '" + path.string() + "': " + ec.message());
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> head(kFixedHeader + 8 * 32);
  f.read(reinterpret_cast<char*>(head.data()), static_cast<std::streamsize>(std::min<std::uintmax_t>(head.size(), total)));
  const auto got = static_cast<std::size_t>(f.gcount());
  Header h;
  try {
    h = parse_header(head.data(), got, total);
  } catch (const FormatError& e) {
    throw FormatError("'" + path.string() + "': " + e.what());
  }
  ad::Tensor t(h.shape);
  std::vector<std::uint8_t> payload(h.payload_bytes);
  f.clear();
  f.seekg(static_cast<std::streamoff>(h.header_bytes));
  f.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (static_cast<std::size_t>(f.gcount()) != payload.size()) throw FormatError("'" + path.string() + "': truncated payload");
  fill_payload(t, h.dtype, payload.data());
  return t;
}

}  // namespace spacy::io
