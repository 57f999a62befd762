// SPDX-License-Identifier: Apache-2.0
#include "vmseg/dataio.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace vmseg {

namespace fs = std::filesystem;

void VideoSample::validate() const {
  if (frames.empty()) throw std::invalid_argument("VideoSample: empty");
  if (flow.size() != frames.size() || masks.size() != frames.size())
    throw std::invalid_argument("VideoSample '" + name + "': modality lengths differ");
  const int h = frames[0].dim(1), w = frames[0].dim(2);
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].dim(0) != 3 || frames[t].dim(1) != h || frames[t].dim(2) != w)
      throw std::invalid_argument("VideoSample '" + name + "': bad frame " +
                                  std::to_string(t));
    if (flow[t].dim(0) != 2 || flow[t].dim(1) != h || flow[t].dim(2) != w)
      throw std::invalid_argument("VideoSample '" + name + "': bad flow " +
                                  std::to_string(t));
    if (masks[t].dim(0) != 1 || masks[t].dim(1) != h || masks[t].dim(2) != w)
      throw std::invalid_argument("VideoSample '" + name + "': bad mask " +
                                  std::to_string(t));
    if (!flow[t].all_finite())
      throw std::invalid_argument("VideoSample '" + name + "': non-finite flow");
    for (float v : masks[t].raw())
      if (v != 0.0f && v != 1.0f)
        throw std::invalid_argument("VideoSample '" + name + "': non-binary mask");
  }
}

// ---------------------------------------------------------------------------
// Procedural textures
// ---------------------------------------------------------------------------

namespace {

std::uint32_t hash_mix(std::uint32_t x) {
  x ^= x >> 16;
  x *= 0x7feb352du;
  x ^= x >> 15;
  x *= 0x846ca68bu;
  x ^= x >> 16;
  return x;
}

float lattice_value(std::uint32_t seed, int x, int y, int channel) {
  std::uint32_t h = seed;
  h = hash_mix(h ^ static_cast<std::uint32_t>(x * 0x9E3779B1));
  h = hash_mix(h ^ static_cast<std::uint32_t>(y * 0x85EBCA77));
  h = hash_mix(h ^ static_cast<std::uint32_t>(channel * 0xC2B2AE3D));
  return static_cast<float>(h) / 4294967295.0f;
}

// Value noise at integer coordinates with cell size `cell`; piecewise-bilinear,
// translation of sample coordinates by integer multiples shifts it rigidly.
float value_noise(std::uint32_t seed, int x, int y, int channel, int cell) {
  const int gx = x >= 0 ? x / cell : -((-x + cell - 1) / cell);
  const int gy = y >= 0 ? y / cell : -((-y + cell - 1) / cell);
  const float fx = static_cast<float>(x - gx * cell) / static_cast<float>(cell);
  const float fy = static_cast<float>(y - gy * cell) / static_cast<float>(cell);
  const float v00 = lattice_value(seed, gx, gy, channel);
  const float v10 = lattice_value(seed, gx + 1, gy, channel);
  const float v01 = lattice_value(seed, gx, gy + 1, channel);
  const float v11 = lattice_value(seed, gx + 1, gy + 1, channel);
  const float a = v00 + (v10 - v00) * fx;
  const float b = v01 + (v11 - v01) * fx;
  return a + (b - a) * fy;
}

struct ObjectState {
  int cx, cy;  // center at the current frame
};

bool object_contains(const SynthObject& o, int cx, int cy, int x, int y) {
  if (o.shape == SynthObject::Shape::Rectangle)
    return std::abs(x - cx) <= o.half_w && std::abs(y - cy) <= o.half_h;
  const int dx = x - cx, dy = y - cy;
  return dx * dx + dy * dy <= o.half_w * o.half_w;
}

}  // namespace

SynthConfig random_synth_config(const SynthRandomize& r, std::mt19937& rng,
                                const std::string& name) {
  SynthConfig cfg;
  cfg.width = r.width;
  cfg.height = r.height;
  cfg.frames = r.frames;
  cfg.name = name;
  cfg.background_seed = rng();
  auto irand = [&](int lo, int hi) {
    return lo + static_cast<int>(rng() % static_cast<std::uint32_t>(hi - lo + 1));
  };
  cfg.cam_vx = irand(-r.max_cam_speed, r.max_cam_speed);
  cfg.cam_vy = irand(-r.max_cam_speed, r.max_cam_speed);
  const int n = irand(r.min_objects, r.max_objects);
  const double u_stop = std::uniform_real_distribution<double>(0, 1)(rng);
  const double u_head = std::uniform_real_distribution<double>(0, 1)(rng);
  for (int i = 0; i < n; ++i) {
    SynthObject o;
    o.shape = (rng() % 2 == 0) ? SynthObject::Shape::Rectangle : SynthObject::Shape::Disk;
    o.half_w = irand(r.min_half, r.max_half);
    o.half_h = o.shape == SynthObject::Shape::Disk ? o.half_w : irand(r.min_half, r.max_half);
    o.texture_seed = rng();
    // nonzero independent velocity
    do {
      o.vx = irand(-r.max_speed, r.max_speed);
      o.vy = irand(-r.max_speed, r.max_speed);
    } while (o.vx == 0 && o.vy == 0);
    if (u_stop < r.stop_tail_prob && r.stop_tail > 0) {
      o.stop_begin = cfg.frames - r.stop_tail;
      o.stop_end = cfg.frames;
    } else if (u_head < r.static_head_prob && r.static_head > 0) {
      o.stop_begin = 0;
      o.stop_end = r.static_head;
    }
    // total displacement over the clip, then a start position keeping the
    // object >= 1 px inside the frame for every frame
    int min_dx = 0, max_dx = 0, min_dy = 0, max_dy = 0, px = 0, py = 0;
    for (int t = 0; t + 1 < cfg.frames; ++t) {
      px += cfg.cam_vx + (o.moving_at(t) ? o.vx : 0);
      py += cfg.cam_vy + (o.moving_at(t) ? o.vy : 0);
      min_dx = std::min(min_dx, px);
      max_dx = std::max(max_dx, px);
      min_dy = std::min(min_dy, py);
      max_dy = std::max(max_dy, py);
    }
    const int rx = o.shape == SynthObject::Shape::Disk ? o.half_w : o.half_w;
    const int ry = o.shape == SynthObject::Shape::Disk ? o.half_w : o.half_h;
    const int lo_x = rx + 1 - min_dx, hi_x = cfg.width - 2 - rx - max_dx;
    const int lo_y = ry + 1 - min_dy, hi_y = cfg.height - 2 - ry - max_dy;
    if (lo_x > hi_x || lo_y > hi_y) {
      --i;  // velocity too large for this size; redraw
      continue;
    }
    o.x0 = irand(lo_x, hi_x);
    o.y0 = irand(lo_y, hi_y);
    cfg.objects.push_back(o);
  }
  const int n_dis = r.max_distractors > 0 ? irand(r.min_distractors, r.max_distractors) : 0;
  for (int i = 0; i < n_dis; ++i) {
    SynthObject o;
    o.shape = (rng() % 2 == 0) ? SynthObject::Shape::Rectangle : SynthObject::Shape::Disk;
    o.half_w = irand(r.min_half, r.max_half);
    o.half_h = o.shape == SynthObject::Shape::Disk ? o.half_w : irand(r.min_half, r.max_half);
    o.texture_seed = rng();
    o.vx = 0;
    o.vy = 0;
    // drifts with the camera only; keep it inside the frame throughout
    const int dx_total = cfg.cam_vx * (cfg.frames - 1), dy_total = cfg.cam_vy * (cfg.frames - 1);
    const int lo_x = o.half_w + 1 - std::min(0, dx_total);
    const int hi_x = cfg.width - 2 - o.half_w - std::max(0, dx_total);
    const int lo_y = o.half_h + 1 - std::min(0, dy_total);
    const int hi_y = cfg.height - 2 - o.half_h - std::max(0, dy_total);
    if (lo_x > hi_x || lo_y > hi_y) continue;
    o.x0 = irand(lo_x, hi_x);
    o.y0 = irand(lo_y, hi_y);
    cfg.objects.push_back(o);
  }
  return cfg;
}

VideoSample generate_video(const SynthConfig& cfg) {
  if (cfg.frames < 1 || cfg.width < 8 || cfg.height < 8)
    throw std::invalid_argument("generate_video: bad config dimensions");
  const int n_obj = static_cast<int>(cfg.objects.size());

  // object centers per frame
  std::vector<std::vector<ObjectState>> centers(
      static_cast<std::size_t>(cfg.frames), std::vector<ObjectState>(n_obj));
  for (int i = 0; i < n_obj; ++i) {
    const SynthObject& o = cfg.objects[static_cast<std::size_t>(i)];
    int cx = o.x0, cy = o.y0;
    for (int t = 0; t < cfg.frames; ++t) {
      centers[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] = {cx, cy};
      const int rx = o.shape == SynthObject::Shape::Disk ? o.half_w : o.half_w;
      const int ry = o.shape == SynthObject::Shape::Disk ? o.half_w : o.half_h;
      if (cx - rx < 1 || cx + rx > cfg.width - 2 || cy - ry < 1 ||
          cy + ry > cfg.height - 2)
        throw std::invalid_argument("generate_video: object " + std::to_string(i) +
                                    " leaves the frame at t=" + std::to_string(t));
      if (t + 1 < cfg.frames) {
        cx += cfg.cam_vx + (o.moving_at(t) ? o.vx : 0);
        cy += cfg.cam_vy + (o.moving_at(t) ? o.vy : 0);
      }
    }
  }

  std::vector<bool> ever_moving(static_cast<std::size_t>(n_obj), false);
  for (int i = 0; i < n_obj; ++i)
    for (int t = 0; t + 1 < cfg.frames; ++t)
      if (cfg.objects[static_cast<std::size_t>(i)].moving_at(t))
        ever_moving[static_cast<std::size_t>(i)] = true;

  VideoSample s;
  s.name = cfg.name;
  for (int t = 0; t < cfg.frames; ++t) {
    Tensor<float> frame({3, cfg.height, cfg.width});
    Tensor<float> flow({2, cfg.height, cfg.width});
    Tensor<float> mask({1, cfg.height, cfg.width});
    const int bg_off_x = cfg.cam_vx * t, bg_off_y = cfg.cam_vy * t;
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        int owner = -1;  // topmost object, index order = z-order
        for (int i = n_obj - 1; i >= 0; --i) {
          const ObjectState& st = centers[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
          if (object_contains(cfg.objects[static_cast<std::size_t>(i)], st.cx, st.cy, x, y)) {
            owner = i;
            break;
          }
        }
        if (owner < 0) {
          // background anchored to the world: translate sampling by -offset.
          // Achromatic on purpose: objects are the only saturated regions, the
          // way class-trained appearance features light up on objects.
          const float lum = 0.25f + 0.5f * value_noise(cfg.background_seed,
                                                       x - bg_off_x, y - bg_off_y, 0, 8);
          for (int c = 0; c < 3; ++c) frame.at(c, y, x) = lum;
          flow.at(0, y, x) = static_cast<float>(cfg.cam_vx);
          flow.at(1, y, x) = static_cast<float>(cfg.cam_vy);
        } else {
          const SynthObject& o = cfg.objects[static_cast<std::size_t>(owner)];
          const ObjectState& st = centers[static_cast<std::size_t>(t)][static_cast<std::size_t>(owner)];
          // texture anchored to the object frame, over a saturated base color
          static const float palette[6][3] = {{0.9f, 0.15f, 0.15f}, {0.15f, 0.8f, 0.2f},
                                              {0.2f, 0.3f, 0.9f},   {0.9f, 0.8f, 0.15f},
                                              {0.85f, 0.2f, 0.85f}, {0.15f, 0.8f, 0.8f}};
          const float* color = palette[o.texture_seed % 6u];
          const int ox = x - st.cx, oy = y - st.cy;
          for (int c = 0; c < 3; ++c) {
            float v = 0.7f * color[c] +
                      0.3f * value_noise(o.texture_seed ^ 0xA5A5u, ox, oy, c, 4);
            frame.at(c, y, x) = std::clamp(v, 0.0f, 1.0f);
          }
          const bool moving = o.moving_at(t) && t + 1 < cfg.frames;
          flow.at(0, y, x) = static_cast<float>(cfg.cam_vx + (moving ? o.vx : 0));
          flow.at(1, y, x) = static_cast<float>(cfg.cam_vy + (moving ? o.vy : 0));
          if (ever_moving[static_cast<std::size_t>(owner)]) mask.at(0, y, x) = 1.0f;
        }
      }
    }
    s.frames.push_back(std::move(frame));
    s.flow.push_back(std::move(flow));
    s.masks.push_back(std::move(mask));
  }
  if (cfg.frames >= 2)
    s.flow[static_cast<std::size_t>(cfg.frames - 1)] =
        s.flow[static_cast<std::size_t>(cfg.frames - 2)];
  return s;
}

// ---------------------------------------------------------------------------
// Image / flow codecs
// ---------------------------------------------------------------------------

namespace {

std::uint8_t quantize8(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f) * 255.0f;
  return static_cast<std::uint8_t>(std::floor(c + 0.5f));
}

void read_pnm_header(std::ifstream& in, const fs::path& path, const char* magic,
                     int& w, int& h) {
  std::string m;
  in >> m;
  if (m != magic)
    throw std::runtime_error(path.string() + ": expected " + magic + " header");
  int maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error(path.string() + ": malformed PNM header");
  in.get();  // single whitespace before payload
}

}  // namespace

void write_ppm(const fs::path& path, const Tensor<float>& rgb01) {
  if (rgb01.rank() != 3 || rgb01.dim(0) != 3)
    throw std::invalid_argument("write_ppm: expected [3,H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_ppm: cannot open " + path.string());
  const int h = rgb01.dim(1), w = rgb01.dim(2);
  out << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        row[static_cast<std::size_t>(x) * 3 + c] = quantize8(rgb01.at(c, y, x));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

Tensor<float> read_ppm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_ppm: cannot open " + path.string());
  int w = 0, h = 0;
  read_pnm_header(in, path, "P6", w, h);
  Tensor<float> out({3, h, w});
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error("read_ppm: truncated payload in " + path.string());
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = static_cast<float>(row[static_cast<std::size_t>(x) * 3 + c]) / 255.0f;
  }
  return out;
}

void write_pgm(const fs::path& path, const Tensor<float>& gray01) {
  if (gray01.rank() != 3 || gray01.dim(0) != 1)
    throw std::invalid_argument("write_pgm: expected [1,H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  const int h = gray01.dim(1), w = gray01.dim(2);
  out << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) row[static_cast<std::size_t>(x)] = quantize8(gray01.at(0, y, x));
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
}

Tensor<float> read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
  int w = 0, h = 0;
  read_pnm_header(in, path, "P5", w, h);
  Tensor<float> out({1, h, w});
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w));
  for (int y = 0; y < h; ++y) {
    in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size()));
    if (!in) throw std::runtime_error("read_pgm: truncated payload in " + path.string());
    for (int x = 0; x < w; ++x)
      out.at(0, y, x) = static_cast<float>(row[static_cast<std::size_t>(x)]) / 255.0f;
  }
  return out;
}

void write_flo(const fs::path& path, const Tensor<float>& flow) {
  if (flow.rank() != 3 || flow.dim(0) != 2)
    throw std::invalid_argument("write_flo: expected [2,H,W]");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_flo: cannot open " + path.string());
  const std::int32_t h = flow.dim(1), w = flow.dim(2);
  out.write("PIEH", 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float dx = flow.at(0, y, x), dy = flow.at(1, y, x);
      out.write(reinterpret_cast<const char*>(&dx), 4);
      out.write(reinterpret_cast<const char*>(&dy), 4);
    }
}

Tensor<float> read_flo(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_flo: cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "PIEH", 4) != 0)
    throw std::runtime_error("read_flo: bad magic in " + path.string());
  std::int32_t w = 0, h = 0;
  in.read(reinterpret_cast<char*>(&w), 4);
  in.read(reinterpret_cast<char*>(&h), 4);
  if (!in || w <= 0 || h <= 0)
    throw std::runtime_error("read_flo: bad dimensions in " + path.string());
  Tensor<float> out({2, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float dx = 0, dy = 0;
      in.read(reinterpret_cast<char*>(&dx), 4);
      in.read(reinterpret_cast<char*>(&dy), 4);
      if (!in) throw std::runtime_error("read_flo: truncated payload in " + path.string());
      out.at(0, y, x) = dx;
      out.at(1, y, x) = dy;
    }
  return out;
}

namespace {
std::string indexed_name(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%05d.%s", prefix, i, ext);
  return buf;
}
}  // namespace

void save_sequence(const VideoSample& sample, const fs::path& dir) {
  sample.validate();
  fs::create_directories(dir);
  for (int t = 0; t < sample.length(); ++t) {
    write_ppm(dir / indexed_name("frame", t, "ppm"), sample.frames[static_cast<std::size_t>(t)]);
    write_pgm(dir / indexed_name("mask", t, "pgm"), sample.masks[static_cast<std::size_t>(t)]);
    write_flo(dir / indexed_name("flow", t, "flo"), sample.flow[static_cast<std::size_t>(t)]);
  }
  std::ofstream meta(dir / "meta.txt");
  meta << "T = " << sample.length() << "\n"
       << "H = " << sample.height() << "\n"
       << "W = " << sample.width() << "\n"
       << "name = " << sample.name << "\n";
}

VideoSample load_sequence(const fs::path& dir) {
  const fs::path meta_path = dir / "meta.txt";
  std::ifstream meta(meta_path);
  if (!meta) throw std::runtime_error("load_sequence: missing " + meta_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  if (!kv.count("T") || !kv.count("H") || !kv.count("W"))
    throw std::runtime_error("load_sequence: incomplete meta.txt in " + dir.string());
  const int t_len = std::stoi(kv["T"]);
  const int h = std::stoi(kv["H"]), w = std::stoi(kv["W"]);

  VideoSample s;
  s.name = kv.count("name") ? kv["name"] : dir.filename().string();
  for (int t = 0; t < t_len; ++t) {
    const fs::path fp = dir / indexed_name("frame", t, "ppm");
    const fs::path mp = dir / indexed_name("mask", t, "pgm");
    const fs::path op = dir / indexed_name("flow", t, "flo");
    for (const fs::path* p : {&fp, &mp, &op})
      if (!fs::exists(*p))
        throw std::runtime_error("load_sequence: missing file " + p->string());
    s.frames.push_back(read_ppm(fp));
    Tensor<float> m = read_pgm(mp);
    for (float& v : m.raw()) v = v >= 0.5f ? 1.0f : 0.0f;
    s.masks.push_back(std::move(m));
    s.flow.push_back(read_flo(op));
  }
  for (int t = 0; t < t_len; ++t) {
    if (s.frames[static_cast<std::size_t>(t)].dim(1) != h ||
        s.frames[static_cast<std::size_t>(t)].dim(2) != w ||
        s.flow[static_cast<std::size_t>(t)].dim(1) != h ||
        s.masks[static_cast<std::size_t>(t)].dim(1) != h)
      throw std::runtime_error("load_sequence: inconsistent dimensions at index " +
                               std::to_string(t) + " in " + dir.string());
  }
  s.validate();
  return s;
}

Tensor<float> downsample_mask(const Tensor<float>& mask, int stride) {
  const int h = mask.dim(1), w = mask.dim(2);
  if (h % stride != 0 || w % stride != 0)
    throw std::invalid_argument("downsample_mask: extent not divisible by stride");
  Tensor<float> out({mask.dim(0), h / stride, w / stride});
  for (int c = 0; c < mask.dim(0); ++c)
    for (int y = 0; y < h / stride; ++y)
      for (int x = 0; x < w / stride; ++x)
        out.at(c, y, x) = mask.at(c, y * stride + stride / 2, x * stride + stride / 2);
  return out;
}

Tensor<float> upsample_nearest(const Tensor<float>& t, int factor) {
  Tensor<float> out({t.dim(0), t.dim(1) * factor, t.dim(2) * factor});
  for (int c = 0; c < t.dim(0); ++c)
    for (int y = 0; y < out.dim(1); ++y)
      for (int x = 0; x < out.dim(2); ++x)
        out.at(c, y, x) = t.at(c, y / factor, x / factor);
  return out;
}

std::vector<int> sliding_window_starts(int t_len, int window, int step) {
  if (t_len < 1) throw std::invalid_argument("sliding_window_starts: empty sequence");
  if (window < 1 || step < 1 || step > window)
    throw std::invalid_argument("sliding_window_starts: require window >= step >= 1");
  if (t_len <= window) return {0};
  std::vector<int> starts;
  for (int s = 0; s + window < t_len; s += step) starts.push_back(s);
  starts.push_back(t_len - window);
  return starts;
}

ClipInput<float> clip_from_sample(const VideoSample& sample) {
  ClipInput<float> clip;
  clip.frames = sample.frames;
  clip.flow_angle.reserve(sample.flow.size());
  for (const auto& f : sample.flow) clip.flow_angle.push_back(flow_to_angle(f));
  return clip;
}

SlidingResult sliding_window_infer(const ModelParams<float>& model,
                                   const VideoSample& sample, int window, int step) {
  sample.validate();
  const int t_len = sample.length();
  const ClipInput<float> full = clip_from_sample(sample);
  const std::vector<int> starts = sliding_window_starts(t_len, window, step);

  SlidingResult res;
  std::vector<int> hits(static_cast<std::size_t>(t_len), 0);
  res.prob.resize(static_cast<std::size_t>(t_len));
  for (int s : starts) {
    const int len = std::min(window, t_len - s);
    ClipInput<float> clip;
    clip.frames.assign(full.frames.begin() + s, full.frames.begin() + s + len);
    clip.flow_angle.assign(full.flow_angle.begin() + s, full.flow_angle.begin() + s + len);
    ForwardResult<float> fr = forward_video(clip, model);
    for (int i = 0; i < len; ++i) {
      const std::size_t t = static_cast<std::size_t>(s + i);
      if (hits[t] == 0)
        res.prob[t] = fr.probs[static_cast<std::size_t>(i)];
      else
        add_inplace(res.prob[t], fr.probs[static_cast<std::size_t>(i)]);
      ++hits[t];
    }
  }
  res.masks.resize(static_cast<std::size_t>(t_len));
  for (int t = 0; t < t_len; ++t) {
    Tensor<float>& p = res.prob[static_cast<std::size_t>(t)];
    if (hits[static_cast<std::size_t>(t)] > 1)
      for (float& v : p.raw()) v /= static_cast<float>(hits[static_cast<std::size_t>(t)]);
    Tensor<float> m({1, p.dim(1), p.dim(2)});
    for (int y = 0; y < p.dim(1); ++y)
      for (int x = 0; x < p.dim(2); ++x)
        m.at(0, y, x) = p.at(1, y, x) > 0.5f ? 1.0f : 0.0f;
    res.masks[static_cast<std::size_t>(t)] = std::move(m);
  }
  return res;
}

}  // namespace vmseg
