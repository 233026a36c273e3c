#include "core/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "core/error.hpp"

namespace mmvd::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little endian host");

int ParamStore::add(const std::string& name, Tensor init) {
  MMVD_CHECK(index_.find(name) == index_.end(), ErrorCode::State,
             "duplicate parameter name: ", name);
  MMVD_CHECK(init.size() > 0, ErrorCode::InvalidArgument, "empty parameter: ", name);
  int id = static_cast<int>(values_.size());
  names_.push_back(name);
  values_.push_back(std::move(init));
  index_[name] = id;
  return id;
}

int ParamStore::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? -1 : it->second;
}

Tensor& ParamStore::value(int id) {
  MMVD_CHECK(id >= 0 && id < count(), ErrorCode::InvalidArgument, "bad param id ", id);
  return values_[static_cast<size_t>(id)];
}

const Tensor& ParamStore::value(int id) const {
  MMVD_CHECK(id >= 0 && id < count(), ErrorCode::InvalidArgument, "bad param id ", id);
  return values_[static_cast<size_t>(id)];
}

const std::string& ParamStore::name(int id) const {
  MMVD_CHECK(id >= 0 && id < count(), ErrorCode::InvalidArgument, "bad param id ", id);
  return names_[static_cast<size_t>(id)];
}

size_t ParamStore::total_elements() const {
  size_t n = 0;
  for (const Tensor& t : values_) n += t.size();
  return n;
}

Binding bind_params(ad::Tape& tape, const ParamStore& store, bool requires_grad) {
  Binding b;
  b.vars.reserve(static_cast<size_t>(store.count()));
  for (int i = 0; i < store.count(); ++i)
    b.vars.push_back(tape.leaf(store.value(i), requires_grad, store.name(i)));
  return b;
}

namespace {

Tensor uniform_init(std::vector<int> shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (size_t i = 0; i < t.size(); ++i)
    t[i] = static_cast<real>(rng.uniform(-bound, bound));
  return t;
}

ConvIds add_conv(ParamStore& s, const std::string& prefix, int din, int dout, int k,
                 Rng& rng, bool zero_init = false) {
  ConvIds c;
  c.w = s.add(prefix + ".w",
              zero_init ? Tensor({dout, k, din}) : uniform_init({dout, k, din}, k * din, rng));
  c.b = s.add(prefix + ".b", Tensor({dout}));
  return c;
}

LnIds add_ln(ParamStore& s, const std::string& prefix, int d) {
  LnIds l;
  Tensor g({d});
  g.fill(1);
  l.g = s.add(prefix + ".g", std::move(g));
  l.b = s.add(prefix + ".b", Tensor({d}));
  return l;
}

AttnIds add_attn(ParamStore& s, const std::string& prefix, int d, Rng& rng) {
  AttnIds a;
  a.wq = s.add(prefix + ".wq", uniform_init({d, d}, d, rng));
  a.bq = s.add(prefix + ".bq", Tensor({d}));
  a.wk = s.add(prefix + ".wk", uniform_init({d, d}, d, rng));
  a.bk = s.add(prefix + ".bk", Tensor({d}));
  a.wv = s.add(prefix + ".wv", uniform_init({d, d}, d, rng));
  a.bv = s.add(prefix + ".bv", Tensor({d}));
  a.wo = s.add(prefix + ".wo", uniform_init({d, d}, d, rng));
  a.bo = s.add(prefix + ".bo", Tensor({d}));
  return a;
}

FfnIds add_ffn(ParamStore& s, const std::string& prefix, int d, int mult, Rng& rng) {
  FfnIds f;
  f.w1 = s.add(prefix + ".w1", uniform_init({d, d * mult}, d, rng));
  f.b1 = s.add(prefix + ".b1", Tensor({d * mult}));
  f.w2 = s.add(prefix + ".w2", uniform_init({d * mult, d}, d * mult, rng));
  f.b2 = s.add(prefix + ".b2", Tensor({d}));
  return f;
}

EncoderIds add_encoder(ParamStore& s, const std::string& prefix, int raw_dim, int d,
                       const cfg::EncoderConfig& ec, Rng& rng) {
  EncoderIds e;
  e.conv = add_conv(s, prefix + ".conv", raw_dim, d, ec.conv_kernel, rng);
  for (int l = 0; l < ec.layers; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    LayerIds layer;
    layer.attn = add_attn(s, lp + ".attn", d, rng);
    layer.ln1 = add_ln(s, lp + ".ln1", d);
    layer.ffn = add_ffn(s, lp + ".ffn", d, ec.ffn_multiplier, rng);
    layer.ln2 = add_ln(s, lp + ".ln2", d);
    e.layers.push_back(layer);
  }
  return e;
}

// D -> D/2 -> D/4 -> 1
Mlp3Ids add_regressor(ParamStore& s, const std::string& prefix, int d, Rng& rng) {
  MMVD_CHECK(d % 4 == 0, ErrorCode::Config,
             "regressor input dim must be divisible by 4, got ", d);
  Mlp3Ids m;
  m.w1 = s.add(prefix + ".w1", uniform_init({d, d / 2}, d, rng));
  m.b1 = s.add(prefix + ".b1", Tensor({d / 2}));
  m.w2 = s.add(prefix + ".w2", uniform_init({d / 2, d / 4}, d / 2, rng));
  m.b2 = s.add(prefix + ".b2", Tensor({d / 4}));
  m.w3 = s.add(prefix + ".w3", uniform_init({d / 4, 1}, d / 4, rng));
  m.b3 = s.add(prefix + ".b3", Tensor({1}));
  return m;
}

// residual 3-layer MLP, zero final layer: starts as the exact identity
Mlp3Ids add_projection(ParamStore& s, const std::string& prefix, int d, Rng& rng) {
  Mlp3Ids m;
  m.w1 = s.add(prefix + ".w1", uniform_init({d, d}, d, rng));
  m.b1 = s.add(prefix + ".b1", Tensor({d}));
  m.w2 = s.add(prefix + ".w2", uniform_init({d, d}, d, rng));
  m.b2 = s.add(prefix + ".b2", Tensor({d}));
  m.w3 = s.add(prefix + ".w3", Tensor({d, d}));
  m.b3 = s.add(prefix + ".b3", Tensor({d}));
  return m;
}

}  // namespace

ModelParams ModelParams::build(const ModelDims& dims, const cfg::EncoderConfig& ec,
                               Rng rng) {
  ec.validate();
  MMVD_CHECK(dims.raw_rgb >= 1 && dims.raw_audio >= 1 && dims.raw_flow >= 1,
             ErrorCode::Config, "raw feature dims must be positive");
  ModelParams mp;
  mp.dims = dims;
  mp.enc_cfg = ec;
  ParamStore& s = mp.store;
  mp.enc_rgb = add_encoder(s, "enc.rgb", dims.raw_rgb, ec.dim_rgb, ec, rng);
  mp.enc_audio = add_encoder(s, "enc.audio", dims.raw_audio, ec.dim_audio, ec, rng);
  mp.enc_flow = add_encoder(s, "enc.flow", dims.raw_flow, ec.dim_flow, ec, rng);
  mp.reg_rgb = add_regressor(s, "reg.rgb", ec.dim_rgb, rng);
  mp.reg_audio = add_regressor(s, "reg.audio", ec.dim_audio, rng);
  mp.reg_flow = add_regressor(s, "reg.flow", ec.dim_flow, rng);
  mp.proj_audio = add_projection(s, "proj.audio", ec.dim_audio, rng);
  mp.proj_flow = add_projection(s, "proj.flow", ec.dim_flow, rng);
  const int fused_in = mp.fused_in_dim();
  mp.fusion.w1 = s.add("fuse.lin.w1", uniform_init({fused_in, ec.dim_rgb}, fused_in, rng));
  mp.fusion.b1 = s.add("fuse.lin.b1", Tensor({ec.dim_rgb}));
  mp.fusion.w2 = s.add("fuse.lin.w2", uniform_init({ec.dim_rgb, ec.dim_flow}, ec.dim_rgb, rng));
  mp.fusion.b2 = s.add("fuse.lin.b2", Tensor({ec.dim_flow}));
  for (int i = 0; i < 3; ++i)
    // zero init: every temporal block starts as a pass-through residual
    mp.fusion.tcn[static_cast<size_t>(i)] =
        add_conv(s, "fuse.tcn.l" + std::to_string(i), ec.dim_flow, ec.dim_flow, 3, rng,
                 /*zero_init=*/true);
  mp.reg_fused = add_regressor(s, "reg.fused", ec.dim_flow, rng);
  return mp;
}

namespace {
void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
uint32_t read_u32(std::ifstream& f, const std::string& path) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  MMVD_CHECK(f.gcount() == 4, ErrorCode::Io, path, ": truncated");
  return v;
}
}  // namespace

void save_params(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MMVD_CHECK(f.good(), ErrorCode::Io, "cannot open for write: ", path);
  f.write("MVDP", 4);
  write_u32(f, 1);  // version
  write_u32(f, static_cast<uint32_t>(store.count()));
  for (int i = 0; i < store.count(); ++i) {
    const std::string& name = store.name(i);
    const Tensor& t = store.value(i);
    write_u32(f, static_cast<uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_u32(f, static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) write_u32(f, static_cast<uint32_t>(t.dim(d)));
  }
  for (int i = 0; i < store.count(); ++i) {
    const Tensor& t = store.value(i);
    const uint32_t rows = static_cast<uint32_t>(t.dim(0));
    const uint32_t cols = static_cast<uint32_t>(t.size() / static_cast<size_t>(t.dim(0)));
    f.write("MVD1", 4);
    write_u32(f, rows);
    write_u32(f, cols);
    std::vector<float> buf(t.size());
    for (size_t j = 0; j < t.size(); ++j) buf[j] = static_cast<float>(t[j]);
    f.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  MMVD_CHECK(f.good(), ErrorCode::Io, "write failed: ", path);
}

void load_params(ParamStore& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MMVD_CHECK(f.good(), ErrorCode::Io, "cannot open: ", path);
  char magic[4] = {};
  f.read(magic, 4);
  MMVD_CHECK(f.gcount() == 4 && std::memcmp(magic, "MVDP", 4) == 0, ErrorCode::Io, path,
             ": bad magic");
  const uint32_t version = read_u32(f, path);
  MMVD_CHECK(version == 1, ErrorCode::Io, path, ": unsupported version ", version);
  const uint32_t n = read_u32(f, path);
  MMVD_CHECK(static_cast<int>(n) == store.count(), ErrorCode::Io, path, ": holds ", n,
             " parameters, model has ", store.count());
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t len = read_u32(f, path);
    MMVD_CHECK(len <= 4096, ErrorCode::Io, path, ": implausible name length");
    std::string name(len, '\0');
    f.read(name.data(), len);
    MMVD_CHECK(f.gcount() == static_cast<std::streamsize>(len), ErrorCode::Io, path,
               ": truncated name");
    MMVD_CHECK(name == store.name(static_cast<int>(i)), ErrorCode::Io, path,
               ": parameter ", i, " is '", name, "', model wants '",
               store.name(static_cast<int>(i)), "'");
    const uint32_t nd = read_u32(f, path);
    const Tensor& t = store.value(static_cast<int>(i));
    MMVD_CHECK(static_cast<int>(nd) == t.ndim(), ErrorCode::Io, path, ": ", name,
               " rank ", nd, " vs model ", t.ndim());
    for (uint32_t d = 0; d < nd; ++d) {
      const uint32_t dim = read_u32(f, path);
      MMVD_CHECK(static_cast<int>(dim) == t.dim(static_cast<int>(d)), ErrorCode::Io,
                 path, ": ", name, " dim ", d, " is ", dim, ", model wants ",
                 t.dim(static_cast<int>(d)));
    }
  }
  for (uint32_t i = 0; i < n; ++i) {
    Tensor& t = store.value(static_cast<int>(i));
    f.read(magic, 4);
    MMVD_CHECK(f.gcount() == 4 && std::memcmp(magic, "MVD1", 4) == 0, ErrorCode::Io,
               path, ": bad block magic for ", store.name(static_cast<int>(i)));
    const uint32_t rows = read_u32(f, path);
    const uint32_t cols = read_u32(f, path);
    MMVD_CHECK(static_cast<size_t>(rows) * cols == t.size(), ErrorCode::Io, path,
               ": block size mismatch for ", store.name(static_cast<int>(i)));
    std::vector<float> buf(t.size());
    f.read(reinterpret_cast<char*>(buf.data()),
           static_cast<std::streamsize>(buf.size() * sizeof(float)));
    MMVD_CHECK(f.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)),
               ErrorCode::Io, path, ": truncated payload");
    for (size_t j = 0; j < t.size(); ++j) t[j] = static_cast<real>(buf[j]);
  }
}

}  // namespace mmvd::model
