#include "pwrf/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace pwrf::io {

namespace {

void le_store(double v, unsigned char* out) {
  std::uint64_t u;
  std::memcpy(&u, &v, 8);
  if constexpr (std::endian::native == std::endian::big) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(u >> (8 * i));
  } else {
    std::memcpy(out, &u, 8);
  }
}

double le_load(const unsigned char* in) {
  std::uint64_t u = 0;
  if constexpr (std::endian::native == std::endian::big) {
    for (int i = 7; i >= 0; --i) u = (u << 8) | in[i];
  } else {
    std::memcpy(&u, in, 8);
  }
  double v;
  std::memcpy(&v, &u, 8);
  return v;
}

}  // namespace

std::vector<unsigned char> dump_tensor(const Tensor& t) {
  nlohmann::json header;
  header["shape"] = t.shape();
  std::string line = header.dump() + "\n";
  std::vector<unsigned char> out(line.size() + t.values().size() * 8);
  std::memcpy(out.data(), line.data(), line.size());
  unsigned char* p = out.data() + line.size();
  for (double v : t.values()) {
    le_store(v, p);
    p += 8;
  }
  return out;
}

Tensor parse_tensor(const std::vector<unsigned char>& bytes) {
  auto nl = std::find(bytes.begin(), bytes.end(), static_cast<unsigned char>('\n'));
  check(nl != bytes.end(), "io", "tensor dump: missing header line");
  std::string line(bytes.begin(), nl);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    fail("io", std::string("tensor dump: bad header: ") + e.what());
  }
  check(header.contains("shape") && header["shape"].is_array(), "io",
        "tensor dump: header lacks shape");
  Shape shape = header["shape"].get<Shape>();
  const std::int64_t n = numel(shape);
  const std::size_t payload = bytes.size() - (std::distance(bytes.begin(), nl) + 1);
  check(payload == static_cast<std::size_t>(n) * 8, "io",
        "tensor dump: payload size mismatch for shape " + shape_str(shape));
  std::vector<double> data(static_cast<std::size_t>(n));
  const unsigned char* p = &*nl + 1;
  for (std::int64_t i = 0; i < n; ++i) data[static_cast<std::size_t>(i)] = le_load(p + i * 8);
  return Tensor::from_data(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  auto bytes = dump_tensor(t);
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "io", "cannot open for write: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(f.good(), "io", "write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "io", "cannot open: " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  return parse_tensor(bytes);
}

void save_pgm(const std::filesystem::path& path, std::int64_t H, std::int64_t W,
              const std::vector<unsigned char>& bytes) {
  check(static_cast<std::int64_t>(bytes.size()) == H * W, "io", "save_pgm: size mismatch");
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "io", "cannot open for write: " + path.string());
  f << "P5\n" << W << " " << H << "\n255\n";
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  check(f.good(), "io", "write failed: " + path.string());
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  check(f.good(), "io", "cannot open for write: " + path.string());
  f << text;
  check(f.good(), "io", "write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  check(f.good(), "io", "cannot open: " + path.string());
  std::ostringstream os;
  os << f.rdbuf();
  return os.str();
}

}  // namespace pwrf::io
