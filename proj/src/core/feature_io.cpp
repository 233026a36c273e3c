#include "core/feature_io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "core/error.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace mmvd::data {

static_assert(std::endian::native == std::endian::little,
              "feature container assumes a little endian host");

namespace {
constexpr char kMagic[4] = {'M', 'V', 'D', '1'};
constexpr uint64_t kMaxElems = 1ull << 30;  // sanity cap, ~4 GiB of f32

void write_u32(std::ofstream& f, uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::ifstream& f, const std::string& path) {
  uint32_t v = 0;
  f.read(reinterpret_cast<char*>(&v), 4);
  MMVD_CHECK(f.gcount() == 4, ErrorCode::Io, path, ": truncated header");
  return v;
}
}  // namespace

void round_to_f32(Tensor& x) {
  for (size_t i = 0; i < x.size(); ++i)
    x[i] = static_cast<real>(static_cast<float>(x[i]));
}

void write_feature_file(const std::string& path, const Tensor& x) {
  MMVD_CHECK(x.ndim() == 2, ErrorCode::ShapeMismatch,
             "write_feature_file: want rank 2, got ", x.shape_str());
  const uint64_t elems = static_cast<uint64_t>(x.rows()) * static_cast<uint64_t>(x.cols());
  MMVD_CHECK(elems <= kMaxElems, ErrorCode::InvalidArgument,
             "write_feature_file: ", x.rows(), "x", x.cols(), " exceeds element cap");
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  MMVD_CHECK(f.good(), ErrorCode::Io, "cannot open for write: ", path);
  f.write(kMagic, 4);
  write_u32(f, static_cast<uint32_t>(x.rows()));
  write_u32(f, static_cast<uint32_t>(x.cols()));
  std::vector<float> row(static_cast<size_t>(x.cols()));
  for (int r = 0; r < x.rows(); ++r) {
    for (int c = 0; c < x.cols(); ++c) row[static_cast<size_t>(c)] = static_cast<float>(x.at(r, c));
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  MMVD_CHECK(f.good(), ErrorCode::Io, "write failed: ", path);
}

Tensor read_feature_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  MMVD_CHECK(f.good(), ErrorCode::Io, "cannot open: ", path);
  char magic[4] = {};
  f.read(magic, 4);
  MMVD_CHECK(f.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0, ErrorCode::Io,
             path, ": bad magic");
  const uint32_t rows = read_u32(f, path);
  const uint32_t cols = read_u32(f, path);
  const uint64_t elems = static_cast<uint64_t>(rows) * cols;
  MMVD_CHECK(elems <= kMaxElems, ErrorCode::Io, path, ": implausible size ", rows, "x", cols);
  Tensor out({static_cast<int>(rows), static_cast<int>(cols)});
  std::vector<float> row(cols);
  for (uint32_t r = 0; r < rows; ++r) {
    f.read(reinterpret_cast<char*>(row.data()),
           static_cast<std::streamsize>(cols * sizeof(float)));
    MMVD_CHECK(f.gcount() == static_cast<std::streamsize>(cols * sizeof(float)),
               ErrorCode::Io, path, ": truncated payload at row ", r);
    for (uint32_t c = 0; c < cols; ++c)
      out.at(static_cast<int>(r), static_cast<int>(c)) = static_cast<real>(row[c]);
  }
  return out;
}

namespace {
std::string labels_to_text(const std::vector<uint8_t>& labels) {
  std::string s;
  s.reserve(labels.size() * 2);
  for (uint8_t v : labels) {
    s += v ? '1' : '0';
    s += '\n';
  }
  return s;
}

std::vector<uint8_t> labels_from_file(const std::string& path) {
  std::ifstream f(path);
  MMVD_CHECK(f.good(), ErrorCode::Io, "cannot open: ", path);
  std::vector<uint8_t> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    MMVD_CHECK(line == "0" || line == "1", ErrorCode::Io, path,
               ": bad label line '", line, "'");
    out.push_back(line == "1" ? 1 : 0);
  }
  return out;
}
}  // namespace

void save_dataset(const Dataset& ds, const std::string& dir, bool force) {
  fs::path root(dir);
  fs::path manifest = root / "manifest.jsonl";
  if (!force)
    MMVD_CHECK(!fs::exists(manifest), ErrorCode::State,
               "dataset already exists at ", dir, " (use force to overwrite)");
  std::error_code ec;
  fs::create_directories(root / "bags", ec);
  MMVD_CHECK(!ec, ErrorCode::Io, "cannot create ", (root / "bags").string());

  std::ofstream mf(manifest, std::ios::trunc);
  MMVD_CHECK(mf.good(), ErrorCode::Io, "cannot open for write: ", manifest.string());
  json header = {{"kind", "mmvd-manifest"},
                 {"version", 1},
                 {"dims", {{"rgb", ds.dim_rgb}, {"audio", ds.dim_audio}, {"flow", ds.dim_flow}}},
                 {"n_bags", ds.bags.size()}};
  mf << header.dump() << "\n";
  for (const Bag& b : ds.bags) {
    const std::string base = "bags/" + b.id;
    write_feature_file((root / (base + ".rgb.mvd")).string(), b.rgb);
    write_feature_file((root / (base + ".audio.mvd")).string(), b.audio);
    write_feature_file((root / (base + ".flow.mvd")).string(), b.flow);
    std::ofstream lf(root / (base + ".labels.txt"), std::ios::trunc);
    MMVD_CHECK(lf.good(), ErrorCode::Io, "cannot write labels for ", b.id);
    lf << labels_to_text(b.frame_labels);
    json line = {{"id", b.id},          {"y", b.y},
                 {"t", b.t()},          {"rgb", base + ".rgb.mvd"},
                 {"audio", base + ".audio.mvd"}, {"flow", base + ".flow.mvd"},
                 {"labels", base + ".labels.txt"}};
    mf << line.dump() << "\n";
  }
  MMVD_CHECK(mf.good(), ErrorCode::Io, "manifest write failed");
  if (!ds.gen_config_json.empty()) {
    std::ofstream gf(root / "gen_config.json", std::ios::trunc);
    gf << ds.gen_config_json << "\n";
  }
}

Dataset load_dataset(const std::string& dir) {
  fs::path root(dir);
  fs::path manifest = root / "manifest.jsonl";
  std::ifstream mf(manifest);
  MMVD_CHECK(mf.good(), ErrorCode::Io, "cannot open: ", manifest.string());
  std::string line;
  MMVD_CHECK(static_cast<bool>(std::getline(mf, line)), ErrorCode::Io,
             manifest.string(), ": empty manifest");
  json header = json::parse(line, nullptr, false);
  MMVD_CHECK(!header.is_discarded() && header.value("kind", "") == "mmvd-manifest",
             ErrorCode::Io, manifest.string(), ": bad header line");
  Dataset ds;
  ds.dim_rgb = header.at("dims").at("rgb").get<int>();
  ds.dim_audio = header.at("dims").at("audio").get<int>();
  ds.dim_flow = header.at("dims").at("flow").get<int>();
  const size_t declared = header.at("n_bags").get<size_t>();
  while (std::getline(mf, line)) {
    if (line.empty()) continue;
    json j = json::parse(line, nullptr, false);
    MMVD_CHECK(!j.is_discarded(), ErrorCode::Io, manifest.string(), ": bad bag line");
    Bag b;
    b.id = j.at("id").get<std::string>();
    b.y = j.at("y").get<int>();
    MMVD_CHECK(b.y == 0 || b.y == 1, ErrorCode::Io, b.id, ": bag label must be 0/1");
    b.rgb = read_feature_file((root / j.at("rgb").get<std::string>()).string());
    b.audio = read_feature_file((root / j.at("audio").get<std::string>()).string());
    b.flow = read_feature_file((root / j.at("flow").get<std::string>()).string());
    const int t = j.at("t").get<int>();
    MMVD_CHECK(b.rgb.rows() == t && b.audio.rows() == t && b.flow.rows() == t,
               ErrorCode::Io, b.id, ": timestep mismatch across modalities");
    MMVD_CHECK(b.rgb.cols() == ds.dim_rgb, ErrorCode::Io, b.id, ": rgb dim ",
               b.rgb.cols(), " vs declared ", ds.dim_rgb);
    MMVD_CHECK(b.audio.cols() == ds.dim_audio, ErrorCode::Io, b.id, ": audio dim ",
               b.audio.cols(), " vs declared ", ds.dim_audio);
    MMVD_CHECK(b.flow.cols() == ds.dim_flow, ErrorCode::Io, b.id, ": flow dim ",
               b.flow.cols(), " vs declared ", ds.dim_flow);
    b.frame_labels = labels_from_file((root / j.at("labels").get<std::string>()).string());
    MMVD_CHECK(static_cast<int>(b.frame_labels.size()) == t, ErrorCode::Io, b.id,
               ": ", b.frame_labels.size(), " labels for ", t, " frames");
    bool any = false;
    for (uint8_t v : b.frame_labels) any = any || v;
    MMVD_CHECK((b.y == 1) == any, ErrorCode::Io, b.id,
               ": bag label disagrees with frame labels");
    ds.bags.push_back(std::move(b));
  }
  MMVD_CHECK(ds.bags.size() == declared, ErrorCode::Io, manifest.string(),
             ": header declares ", declared, " bags, found ", ds.bags.size());
  std::ifstream gf(root / "gen_config.json");
  if (gf.good())
    ds.gen_config_json.assign(std::istreambuf_iterator<char>(gf),
                              std::istreambuf_iterator<char>());
  return ds;
}

}  // namespace mmvd::data
