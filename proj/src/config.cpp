// SPDX-License-Identifier: Apache-2.0
#include "vmseg/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vmseg {

namespace {

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
T parse_num(const std::string& s);

template <>
int parse_num<int>(const std::string& s) {
  std::size_t n = 0;
  const int v = std::stoi(s, &n);
  if (n != s.size()) throw std::invalid_argument("not an integer: " + s);
  return v;
}

template <>
double parse_num<double>(const std::string& s) {
  std::size_t n = 0;
  const double v = std::stod(s, &n);
  if (n != s.size()) throw std::invalid_argument("not a number: " + s);
  return v;
}

template <>
std::uint64_t parse_num<std::uint64_t>(const std::string& s) {
  std::size_t n = 0;
  const std::uint64_t v = std::stoull(s, &n);
  if (n != s.size()) throw std::invalid_argument("not an integer: " + s);
  return v;
}

const std::map<std::string, Field>& registry() {
  static const std::map<std::string, Field> fields = [] {
    std::map<std::string, Field> f;
    auto num = [&f](const char* key, auto member) {
      using M = decltype(member);
      f[key] = Field{
          [member](RunConfig& c, const std::string& v) {
            c.*member = parse_num<std::remove_reference_t<decltype(c.*member)>>(v);
          },
          [member](const RunConfig& c) {
            std::ostringstream os;
            os << c.*member;
            return os.str();
          }};
      (void)static_cast<M>(member);
    };
    auto mnum = [&f](const char* key, auto member) {
      f[key] = Field{
          [member](RunConfig& c, const std::string& v) {
            c.model.*member = parse_num<std::remove_reference_t<decltype(c.model.*member)>>(v);
          },
          [member](const RunConfig& c) {
            std::ostringstream os;
            os << c.model.*member;
            return os.str();
          }};
    };
    auto tnum = [&f](const char* key, auto member) {
      f[key] = Field{
          [member](RunConfig& c, const std::string& v) {
            c.train.*member = parse_num<std::remove_reference_t<decltype(c.train.*member)>>(v);
          },
          [member](const RunConfig& c) {
            std::ostringstream os;
            os << c.train.*member;
            return os.str();
          }};
    };
    auto gnum = [&f](const char* key, auto member) {
      f[key] = Field{
          [member](RunConfig& c, const std::string& v) {
            c.gen.*member = parse_num<std::remove_reference_t<decltype(c.gen.*member)>>(v);
          },
          [member](const RunConfig& c) {
            std::ostringstream os;
            os << c.gen.*member;
            return os.str();
          }};
    };

    mnum("d_app", &ModelConfig::d_app);
    mnum("d_h", &ModelConfig::d_h);
    mnum("k_gru", &ModelConfig::k_gru);
    mnum("stride", &ModelConfig::stride);
    mnum("d_mid_app", &ModelConfig::d_mid_app);
    mnum("d_mid_mot", &ModelConfig::d_mid_mot);
    mnum("stack_depth", &ModelConfig::stack_depth);
    mnum("stack_width", &ModelConfig::stack_width);
    f["variant"] = Field{
        [](RunConfig& c, const std::string& v) { c.model.variant = variant_from_name(v); },
        [](const RunConfig& c) { return std::string(variant_name(c.model.variant)); }};
    f["bidirectional"] = Field{
        [](RunConfig& c, const std::string& v) { c.model.bidirectional = parse_num<int>(v) != 0; },
        [](const RunConfig& c) { return std::string(c.model.bidirectional ? "1" : "0"); }};

    tnum("learning_rate", &TrainConfig::learning_rate);
    tnum("lr_decay_per_epoch", &TrainConfig::lr_decay_per_epoch);
    tnum("weight_decay", &TrainConfig::weight_decay);
    tnum("clip_bound", &TrainConfig::clip_bound);
    tnum("batch_frames", &TrainConfig::batch_frames);
    tnum("iterations", &TrainConfig::iterations);
    tnum("pretrain_iterations", &TrainConfig::pretrain_iterations);
    tnum("aug_fraction", &TrainConfig::aug_fraction);
    tnum("freeze_len", &TrainConfig::freeze_len);
    tnum("crop_h", &TrainConfig::crop_h);
    tnum("crop_w", &TrainConfig::crop_w);
    tnum("iterations_per_epoch", &TrainConfig::iterations_per_epoch);
    tnum("rng_seed", &TrainConfig::rng_seed);

    gnum("gen_width", &SynthRandomize::width);
    gnum("gen_height", &SynthRandomize::height);
    gnum("gen_frames", &SynthRandomize::frames);
    gnum("gen_min_objects", &SynthRandomize::min_objects);
    gnum("gen_max_objects", &SynthRandomize::max_objects);
    gnum("gen_min_half", &SynthRandomize::min_half);
    gnum("gen_max_half", &SynthRandomize::max_half);
    gnum("gen_max_speed", &SynthRandomize::max_speed);
    gnum("gen_max_cam_speed", &SynthRandomize::max_cam_speed);
    gnum("gen_stop_tail_prob", &SynthRandomize::stop_tail_prob);
    gnum("gen_stop_tail", &SynthRandomize::stop_tail);
    gnum("gen_static_head_prob", &SynthRandomize::static_head_prob);
    gnum("gen_static_head", &SynthRandomize::static_head);
    gnum("gen_min_distractors", &SynthRandomize::min_distractors);
    gnum("gen_max_distractors", &SynthRandomize::max_distractors);

    num("window", &RunConfig::window);
    num("step", &RunConfig::step);
    return f;
  }();
  return fields;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  const auto b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

}  // namespace

void RunConfig::apply_line(const std::string& raw, int line_no) {
  std::string line = raw;
  const auto hash = line.find('#');
  if (hash != std::string::npos) line = line.substr(0, hash);
  line = trim(line);
  if (line.empty()) return;
  const auto eq = line.find('=');
  if (eq == std::string::npos)
    throw std::invalid_argument("config line " + std::to_string(line_no) +
                                ": expected 'key = value'");
  const std::string key = trim(line.substr(0, eq));
  const std::string value = trim(line.substr(eq + 1));
  const auto it = registry().find(key);
  if (it == registry().end())
    throw std::invalid_argument("config line " + std::to_string(line_no) +
                                ": unknown key '" + key + "'");
  try {
    it->second.set(*this, value);
  } catch (const std::exception& e) {
    throw std::invalid_argument("config line " + std::to_string(line_no) + ": bad value for '" +
                                key + "': " + e.what());
  }
}

RunConfig RunConfig::from_string(const std::string& text) {
  RunConfig cfg;
  std::istringstream is(text);
  std::string line;
  int no = 0;
  while (std::getline(is, line)) cfg.apply_line(line, ++no);
  return cfg;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_string(ss.str());
}

std::string RunConfig::to_string() const {
  std::ostringstream os;
  for (const auto& [key, field] : registry()) os << key << " = " << field.get(*this) << "\n";
  return os.str();
}

}  // namespace vmseg
