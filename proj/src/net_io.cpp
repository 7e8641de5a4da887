#include "vdyn/net_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace vdyn {

static_assert(std::endian::native == std::endian::little,
              "parameter files assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'V', 'D', 'N', 'W'};
constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a64_bytes(const unsigned char* p, std::size_t n,
                            std::uint64_t h = 0xcbf29ce484222325ull) {
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

template <typename T>
void append(std::vector<unsigned char>& buf, const T& v) {
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  buf.insert(buf.end(), p, p + sizeof(T));
}

}  // namespace

void save_params(const InitializedLstm& net, const std::string& path) {
  NetArch arch = arch_of(net);
  std::string desc = arch.to_string();

  std::vector<float> values;
  visit_params(const_cast<InitializedLstm&>(net), "net",
               [&values](const std::string&, std::vector<double>& arr) {
                 for (double v : arr) values.push_back(static_cast<float>(v));
               });

  std::vector<unsigned char> buf;
  buf.insert(buf.end(), kMagic, kMagic + 4);
  append(buf, kVersion);
  append(buf, static_cast<std::uint32_t>(desc.size()));
  buf.insert(buf.end(), desc.begin(), desc.end());
  append(buf, static_cast<std::uint64_t>(values.size()));
  for (float v : values) append(buf, v);
  std::uint64_t sum = fnv1a64_bytes(buf.data(), buf.size());
  append(buf, sum);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("save_params: cannot open '" + path + "'");
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw DataError("save_params: write failed for '" + path + "'");
}

InitializedLstm load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_params: missing file '" + path + "'");
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());

  auto truncated = [&path]() -> DataError {
    return DataError("load_params: truncated file '" + path + "'");
  };
  std::size_t pos = 0;
  auto read_bytes = [&](void* dst, std::size_t n) {
    if (pos + n > buf.size()) throw truncated();
    std::memcpy(dst, buf.data() + pos, n);
    pos += n;
  };

  char magic[4];
  read_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError("load_params: bad magic in '" + path + "'");
  }
  std::uint32_t version = 0;
  read_bytes(&version, 4);
  if (version != kVersion) {
    throw DataError("load_params: unsupported version " +
                    std::to_string(version) + " in '" + path + "'");
  }
  std::uint32_t desc_len = 0;
  read_bytes(&desc_len, 4);
  if (desc_len > (1u << 16)) throw DataError("load_params: absurd descriptor");
  std::string desc(desc_len, '\0');
  read_bytes(desc.data(), desc_len);
  std::uint64_t count = 0;
  read_bytes(&count, 8);

  if (pos + count * 4 + 8 != buf.size()) throw truncated();
  std::uint64_t stored_sum = 0;
  std::memcpy(&stored_sum, buf.data() + buf.size() - 8, 8);
  std::uint64_t sum = fnv1a64_bytes(buf.data(), buf.size() - 8);
  if (sum != stored_sum) {
    throw DataError("load_params: checksum mismatch in '" + path + "'");
  }

  NetArch arch = NetArch::parse(desc);
  InitializedLstm net = make_net(arch);

  std::size_t taken = 0;
  bool overflow = false;
  visit_params(net, "net",
               [&](const std::string&, std::vector<double>& arr) {
                 for (double& v : arr) {
                   if (taken >= count) {
                     overflow = true;
                     return;
                   }
                   float f = 0;
                   std::memcpy(&f, buf.data() + pos + taken * 4, 4);
                   v = static_cast<double>(f);
                   ++taken;
                 }
               });
  if (overflow || taken != count) {
    throw DataError("load_params: parameter count mismatch in '" + path +
                    "' (descriptor wants " + std::to_string(taken) +
                    ", file has " + std::to_string(count) + ")");
  }
  return net;
}

InitializedLstm load_params(const std::string& path, const NetArch& expected) {
  InitializedLstm net = load_params(path);
  NetArch got = arch_of(net);
  if (!(got == expected)) {
    throw DataError("load_params: descriptor mismatch in '" + path +
                    "': file has " + got.to_string() + ", expected " +
                    expected.to_string());
  }
  return net;
}

}  // namespace vdyn
