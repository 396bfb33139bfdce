#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <zlib.h>

#include "ida/config.hpp"
#include "ida/trainer.hpp"

// Binary checkpoint archive, little-endian host layout:
//   "IDACKPT\0" | u32 version | u32 sizeof(scalar) | payload | u32 crc32
// The crc covers every byte before it.
namespace ida {

inline constexpr char kCheckpointMagic[8] = {'I', 'D', 'A', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Serializable union of the adaptation and pretraining states. For
/// phase "pretrain" the teacher slot holds the best snapshot so far; in both
/// phases the teacher is the model to deploy.
template <typename T>
struct Checkpoint {
  std::string phase = "adapt";
  RunConfig config;
  ModelState<T> student, teacher;
  PrototypeBank bank;
  AdamState<T> adam;
  std::string rng_state;
  std::uint64_t iteration = 0;
  double best_score = -1;
  std::uint64_t best_iteration = 0;
  History history;
};

namespace detail {

class Writer {
 public:
  template <typename V>
  void pod(const V& v) {
    static_assert(std::is_trivially_copyable_v<V>);
    buf_.append(reinterpret_cast<const char*>(&v), sizeof(V));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.append(s);
  }
  template <typename V>
  void vec(const std::vector<V>& v) {
    pod<std::uint64_t>(v.size());
    if (!v.empty()) buf_.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(V));
  }
  std::string& buffer() { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const std::string& buf, std::size_t begin, std::size_t end) : buf_(buf), pos_(begin), end_(end) {}

  template <typename V>
  V pod() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename V>
  std::vector<V> vec() {
    const auto n = pod<std::uint64_t>();
    if (n > (end_ - pos_) / sizeof(V)) throw FormatError("checkpoint: truncated array");
    std::vector<V> v(n);
    if (n) std::memcpy(v.data(), buf_.data() + pos_, n * sizeof(V));
    pos_ += n * sizeof(V);
    return v;
  }
  bool done() const { return pos_ == end_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw FormatError("checkpoint: truncated payload");
  }
  const std::string& buf_;
  std::size_t pos_, end_;
};

template <typename T>
void write_model(Writer& w, const ModelState<T>& m) {
  const auto& c = m.config;
  for (int v : {c.depth, c.base_channels, c.num_classes, c.input_size.width, c.input_size.height}) w.pod<std::int32_t>(v);
  w.pod<std::uint64_t>(m.iteration);
  w.pod<std::uint64_t>(m.params.size());
  for (const auto& p : m.params) {
    w.str(p.name);
    w.vec(std::vector<std::int32_t>(p.shape.begin(), p.shape.end()));
    w.vec(p.values);
  }
}

template <typename T>
ModelState<T> read_model(Reader& r) {
  ModelState<T> m;
  auto& c = m.config;
  c.depth = r.pod<std::int32_t>();
  c.base_channels = r.pod<std::int32_t>();
  c.num_classes = r.pod<std::int32_t>();
  c.input_size.width = r.pod<std::int32_t>();
  c.input_size.height = r.pod<std::int32_t>();
  m.iteration = r.pod<std::uint64_t>();
  const auto n = r.pod<std::uint64_t>();
  if (n > 1u << 20) throw FormatError("checkpoint: implausible parameter count");
  for (std::uint64_t i = 0; i < n; ++i) {
    NamedArray<T> p;
    p.name = r.str();
    const auto shape = r.vec<std::int32_t>();
    p.shape.assign(shape.begin(), shape.end());
    p.values = r.vec<T>();
    m.params.push_back(std::move(p));
  }
  return m;
}

inline void write_bank(Writer& w, const PrototypeBank& b) {
  w.pod<std::uint64_t>(b.vectors.size());
  for (const auto& v : b.vectors) w.vec(v);
  w.pod(b.iteration);
  w.pod(b.last_w_t2s);
  w.pod(b.last_w_s2t);
}

inline PrototypeBank read_bank(Reader& r) {
  PrototypeBank b;
  const auto n = r.pod<std::uint64_t>();
  if (n > 1024) throw FormatError("checkpoint: implausible class count");
  for (std::uint64_t i = 0; i < n; ++i) b.vectors.push_back(r.vec<double>());
  b.iteration = r.pod<std::uint64_t>();
  b.last_w_t2s = r.pod<double>();
  b.last_w_s2t = r.pod<double>();
  return b;
}

inline void write_history(Writer& w, const History& h) {
  w.pod<std::uint64_t>(h.steps.size());
  for (const auto& s : h.steps) {
    w.pod(s.iteration);
    for (double v : {s.loss.cls, s.loss.dice, s.loss.idcl_t2s, s.loss.idcl_s2t, s.loss.con, s.loss.total, s.w_t2s,
                     s.w_s2t, s.pseudo_fg, s.lr})
      w.pod(v);
  }
  w.pod<std::uint64_t>(h.evals.size());
  for (const auto& e : h.evals) {
    w.pod(e.iteration);
    w.pod(e.dice);
    w.pod(e.cl_dice);
  }
}

inline History read_history(Reader& r) {
  History h;
  const auto ns = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < ns; ++i) {
    StepRecord s;
    s.iteration = r.pod<std::uint64_t>();
    for (double* v : {&s.loss.cls, &s.loss.dice, &s.loss.idcl_t2s, &s.loss.idcl_s2t, &s.loss.con, &s.loss.total,
                      &s.w_t2s, &s.w_s2t, &s.pseudo_fg, &s.lr})
      *v = r.pod<double>();
    h.steps.push_back(s);
  }
  const auto ne = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < ne; ++i) {
    EvalRecord e;
    e.iteration = r.pod<std::uint64_t>();
    e.dice = r.pod<double>();
    e.cl_dice = r.pod<double>();
    h.evals.push_back(e);
  }
  return h;
}

inline std::uint32_t crc_of(const std::string& buf, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(n)));
}

}  // namespace detail

template <typename T>
std::string serialize_checkpoint(const Checkpoint<T>& c) {
  detail::Writer w;
  w.buffer().append(kCheckpointMagic, sizeof(kCheckpointMagic));
  w.pod(kCheckpointVersion);
  w.pod<std::uint32_t>(sizeof(T));
  w.str(c.phase);
  w.str(to_json(c.config).dump());
  detail::write_model(w, c.student);
  detail::write_model(w, c.teacher);
  detail::write_bank(w, c.bank);
  w.pod<std::uint64_t>(c.adam.step);
  w.pod<std::uint64_t>(c.adam.m.size());
  for (std::size_t i = 0; i < c.adam.m.size(); ++i) {
    w.vec(c.adam.m[i]);
    w.vec(c.adam.v[i]);
  }
  w.str(c.rng_state);
  w.pod(c.iteration);
  w.pod(c.best_score);
  w.pod(c.best_iteration);
  detail::write_history(w, c.history);
  const std::uint32_t crc = detail::crc_of(w.buffer(), w.buffer().size());
  w.pod(crc);
  return std::move(w.buffer());
}

template <typename T>
Checkpoint<T> deserialize_checkpoint(const std::string& buf) {
  constexpr std::size_t header = sizeof(kCheckpointMagic) + 8;
  if (buf.size() < header + 4 || std::memcmp(buf.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw FormatError("checkpoint: not an IDA checkpoint");
  detail::Reader head(buf, sizeof(kCheckpointMagic), header);
  const auto version = head.pod<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: version " + std::to_string(version) + " not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  const auto scalar = head.pod<std::uint32_t>();
  if (scalar != sizeof(T)) throw FormatError("checkpoint: scalar size " + std::to_string(scalar) + " does not match");
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + buf.size() - 4, 4);
  if (stored != detail::crc_of(buf, buf.size() - 4)) throw FormatError("checkpoint: integrity check failed (crc32)");

  detail::Reader r(buf, header, buf.size() - 4);
  Checkpoint<T> c;
  c.phase = r.str();
  const auto cfg_text = r.str();
  const Json cfg_json = Json::parse(cfg_text, nullptr, false);
  if (cfg_json.is_discarded()) throw FormatError("checkpoint: config snapshot is not JSON");
  c.config = config_from_json(cfg_json);
  c.student = detail::read_model<T>(r);
  c.teacher = detail::read_model<T>(r);
  c.bank = detail::read_bank(r);
  c.adam.step = r.pod<std::uint64_t>();
  const auto na = r.pod<std::uint64_t>();
  if (na > 1u << 20) throw FormatError("checkpoint: implausible optimizer state");
  for (std::uint64_t i = 0; i < na; ++i) {
    c.adam.m.push_back(r.vec<double>());
    c.adam.v.push_back(r.vec<double>());
  }
  c.rng_state = r.str();
  c.iteration = r.pod<std::uint64_t>();
  c.best_score = r.pod<double>();
  c.best_iteration = r.pod<std::uint64_t>();
  c.history = detail::read_history(r);
  if (!r.done()) throw FormatError("checkpoint: trailing bytes");
  return c;
}

/// Write to a temporary sibling, then rename.
template <typename T>
void save_checkpoint(const Checkpoint<T>& c, const std::filesystem::path& path) {
  const std::string buf = serialize_checkpoint(c);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw ConfigError("failed writing checkpoint " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint<T>(ss.str());
}

inline std::string rng_to_string(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

inline Rng rng_from_string(const std::string& s) {
  Rng rng;
  std::istringstream is(s);
  is >> rng;
  if (!is) throw FormatError("checkpoint: bad rng state");
  return rng;
}

template <typename T>
Checkpoint<T> make_checkpoint(const TrainerState<T>& st, const RunConfig& cfg) {
  Checkpoint<T> c;
  c.phase = "adapt";
  c.config = cfg;
  c.student = st.student;
  c.teacher = st.teacher;
  c.bank = st.bank;
  c.adam = st.adam;
  c.rng_state = rng_to_string(st.rng);
  c.iteration = st.iteration;
  c.history = st.history;
  return c;
}

template <typename T>
Checkpoint<T> make_checkpoint(const PretrainState<T>& st, const RunConfig& cfg) {
  Checkpoint<T> c;
  c.phase = "pretrain";
  c.config = cfg;
  c.student = st.model;
  c.teacher = st.best;
  c.bank = st.bank;
  c.adam = st.adam;
  c.rng_state = rng_to_string(st.rng);
  c.iteration = st.iteration;
  c.best_score = st.best_score;
  c.best_iteration = st.best_iteration;
  c.history = st.history;
  return c;
}

template <typename T>
TrainerState<T> trainer_state_from(const Checkpoint<T>& c) {
  if (c.phase != "adapt") throw ConfigError("checkpoint phase is '" + c.phase + "', expected 'adapt'");
  TrainerState<T> st;
  st.student = c.student;
  st.teacher = c.teacher;
  st.bank = c.bank;
  st.adam = c.adam;
  st.rng = rng_from_string(c.rng_state);
  st.iteration = c.iteration;
  st.history = c.history;
  return st;
}

template <typename T>
PretrainState<T> pretrain_state_from(const Checkpoint<T>& c) {
  if (c.phase != "pretrain") throw ConfigError("checkpoint phase is '" + c.phase + "', expected 'pretrain'");
  PretrainState<T> st;
  st.model = c.student;
  st.best = c.teacher;
  st.bank = c.bank;
  st.adam = c.adam;
  st.rng = rng_from_string(c.rng_state);
  st.iteration = c.iteration;
  st.best_score = c.best_score;
  st.best_iteration = c.best_iteration;
  st.history = c.history;
  return st;
}

}  // namespace ida
