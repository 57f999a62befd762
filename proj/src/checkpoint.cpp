// SPDX-License-Identifier: Apache-2.0
#include "vmseg/checkpoint.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace vmseg {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& buf, float f) {
  std::uint32_t v;
  std::memcpy(&v, &f, 4);
  put_u32(buf, v);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string path;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("checkpoint: truncated file " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  float f32() {
    const std::uint32_t v = u32();
    float f;
    std::memcpy(&f, &v, 4);
    return f;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace

std::string model_config_echo(const ModelConfig& cfg) {
  std::ostringstream os;
  os << "variant = " << variant_name(cfg.variant) << "\n"
     << "d_app = " << cfg.d_app << "\n"
     << "d_h = " << cfg.d_h << "\n"
     << "k_gru = " << cfg.k_gru << "\n"
     << "stride = " << cfg.stride << "\n"
     << "d_mid_app = " << cfg.d_mid_app << "\n"
     << "d_mid_mot = " << cfg.d_mid_mot << "\n"
     << "bidirectional = " << (cfg.bidirectional ? 1 : 0) << "\n"
     << "stack_depth = " << cfg.stack_depth << "\n"
     << "stack_width = " << cfg.stack_width << "\n"
     << "rmsprop_rho = 0.9\nrmsprop_eps = 1e-8\n";
  return os.str();
}

ModelConfig model_config_from_echo(const std::string& echo) {
  std::map<std::string, std::string> kv;
  std::istringstream is(echo);
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  ModelConfig cfg;
  auto geti = [&](const char* k, int& dst) {
    if (kv.count(k)) dst = std::stoi(kv[k]);
  };
  if (kv.count("variant")) cfg.variant = variant_from_name(kv["variant"]);
  geti("d_app", cfg.d_app);
  geti("d_h", cfg.d_h);
  geti("k_gru", cfg.k_gru);
  geti("stride", cfg.stride);
  geti("d_mid_app", cfg.d_mid_app);
  geti("d_mid_mot", cfg.d_mid_mot);
  geti("stack_depth", cfg.stack_depth);
  geti("stack_width", cfg.stack_width);
  int bidir = cfg.bidirectional ? 1 : 0;
  geti("bidirectional", bidir);
  cfg.bidirectional = bidir != 0;
  return cfg;
}

void save_checkpoint(const std::filesystem::path& path, ModelParams<float>& model) {
  std::string buf;
  buf.append("CGRU", 4);
  put_u32(buf, kCheckpointVersion);
  const std::string echo = model_config_echo(model.cfg);
  put_u32(buf, static_cast<std::uint32_t>(echo.size()));
  buf.append(echo);

  auto refs = param_refs(model);
  put_u32(buf, static_cast<std::uint32_t>(refs.size()));
  for (auto& r : refs) {
    put_u32(buf, static_cast<std::uint32_t>(r.name.size()));
    buf.append(r.name);
    buf.push_back(static_cast<char>(r.tensor->rank()));
    for (int d = 0; d < r.tensor->rank(); ++d)
      put_u32(buf, static_cast<std::uint32_t>(r.tensor->dim(d)));
    buf.push_back(0);  // dtype f32
    for (float v : r.tensor->raw()) put_f32(buf, v);
  }
  const std::uint32_t crc = static_cast<std::uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  put_u32(buf, crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  if (buf.size() < 12) throw std::runtime_error("load_checkpoint: truncated " + path.string());

  const std::string body = buf.substr(0, buf.size() - 4);
  Reader tail{buf, buf.size() - 4, path.string()};
  const std::uint32_t stored_crc = tail.u32();
  const std::uint32_t crc = static_cast<std::uint32_t>(crc32(
      0, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
  if (crc != stored_crc)
    throw std::runtime_error("load_checkpoint: CRC mismatch in " + path.string());

  Reader r{body, 0, path.string()};
  if (r.str(4) != "CGRU")
    throw std::runtime_error("load_checkpoint: bad magic in " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " +
                             std::to_string(version));
  const std::string echo = r.str(r.u32());
  ModelParams<float> model = make_model<float>(model_config_from_echo(echo));

  auto refs = param_refs(model);
  const std::uint32_t count = r.u32();
  if (count != refs.size())
    throw std::runtime_error("load_checkpoint: tensor count mismatch in " + path.string());
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name = r.str(r.u32());
    if (name != refs[i].name)
      throw std::runtime_error("load_checkpoint: unexpected tensor '" + name +
                               "' (expected '" + refs[i].name + "')");
    const int rank = r.u8();
    std::vector<int> dims;
    for (int d = 0; d < rank; ++d) dims.push_back(static_cast<int>(r.u32()));
    if (dims != refs[i].tensor->shape())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
    const int dtype = r.u8();
    if (dtype != 0)
      throw std::runtime_error("load_checkpoint: unsupported dtype for " + name);
    for (float& v : refs[i].tensor->raw()) v = r.f32();
  }
  return model;
}

}  // namespace vmseg
