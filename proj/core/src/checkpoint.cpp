#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include <json.hpp>

#include "rdpi/error.hpp"
#include "rdpi/trainer.hpp"

namespace rdpi {
namespace {

namespace fs = std::filesystem;
constexpr std::array<char, 8> kMagic = {'R', 'D', 'P', 'I', 'C', 'K', 'P', 'T'};

template <typename U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> b{};
  for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b.data(), b.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> b{};
  in.read(reinterpret_cast<char*>(b.data()), b.size());
  if (!in) throw DataError("checkpoint: truncated file");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(b[i]) << (8 * i);
  return v;
}

void put_array(std::ostream& out, const std::string& name, const Eigen::MatrixXd& m) {
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put_le<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(m(i, j)));
}

Eigen::MatrixXd row_vector(std::span<const double> v) {
  Eigen::MatrixXd m(1, static_cast<Eigen::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = v[i];
  return m;
}

std::vector<double> to_vector(const Eigen::MatrixXd& m) {
  if (m.rows() != 1) throw DataError("checkpoint: expected a row vector");
  return {m.data(), m.data() + m.size()};
}

std::string meta_json(const Checkpoint& ck) {
  nlohmann::json j;
  j["format_version"] = Checkpoint::format_version;
  j["nodes"] = ck.denoiser.config.nodes;
  j["train"] = nlohmann::json::parse(ck.config.to_json());
  return j.dump(2);
}

}  // namespace

void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  ck.denoiser.validate();
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, Checkpoint::format_version);
  const std::string meta = meta_json(ck);
  put_le<std::uint64_t>(out, meta.size());
  out.write(meta.data(), static_cast<std::streamsize>(meta.size()));

  std::vector<std::pair<std::string, const Eigen::MatrixXd*>> arrays;
  const Eigen::MatrixXd beta = row_vector(ck.schedule.betas()), astep = row_vector(ck.schedule.alpha_steps()),
                        acum = row_vector(ck.schedule.alpha_cums()), btilde = row_vector(ck.schedule.beta_tildes());
  const Eigen::MatrixXd mean = ck.normalizer.mean.transpose(), sd = ck.normalizer.stddev.transpose();
  arrays.emplace_back("schedule/beta", &beta);
  arrays.emplace_back("schedule/alpha_step", &astep);
  arrays.emplace_back("schedule/alpha_cum", &acum);
  arrays.emplace_back("schedule/beta_tilde", &btilde);
  arrays.emplace_back("normalizer/mean", &mean);
  arrays.emplace_back("normalizer/stddev", &sd);
  ck.denoiser.visit([&](std::string_view n, const Eigen::MatrixXd& m) { arrays.emplace_back("denoiser/" + std::string(n), &m); });
  ck.initial.visit([&](std::string_view n, const Eigen::MatrixXd& m) { arrays.emplace_back("initial/" + std::string(n), &m); });
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) put_array(out, name, *m);
  if (!out) throw DataError("failed writing " + path.string());
  out.close();

  std::ofstream side(fs::path(path.string() + ".json"));
  if (!side) throw DataError("cannot write sidecar for " + path.string());
  side << ck.config.to_json() << '\n';
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError(path.string() + ": not a checkpoint file");
  const auto version = get_le<std::uint32_t>(in);
  if (version != Checkpoint::format_version)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  const auto meta_len = get_le<std::uint64_t>(in);
  if (meta_len > (1u << 24)) throw DataError("checkpoint: implausible header size");
  std::string meta(meta_len, '\0');
  in.read(meta.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw DataError("checkpoint: truncated header");

  Checkpoint ck;
  int nodes = 0;
  try {
    const auto j = nlohmann::json::parse(meta);
    nodes = j.at("nodes").get<int>();
    ck.config = TrainConfig::from_json(j.at("train").dump());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint: bad header: ") + e.what());
  }

  std::map<std::string, Eigen::MatrixXd> arrays;
  const auto count = get_le<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    const auto name_len = get_le<std::uint32_t>(in);
    if (name_len > 4096) throw DataError("checkpoint: implausible array name");
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const auto rows = get_le<std::uint64_t>(in);
    const auto cols = get_le<std::uint64_t>(in);
    if (rows * cols > (1ull << 32)) throw DataError("checkpoint: implausible array size");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = std::bit_cast<double>(get_le<std::uint64_t>(in));
    arrays[name] = std::move(m);
  }
  auto take = [&](const std::string& name) -> Eigen::MatrixXd& {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw DataError("checkpoint: missing array " + name);
    return it->second;
  };

  ck.schedule = NoiseSchedule::from_arrays(to_vector(take("schedule/beta")), to_vector(take("schedule/alpha_step")),
                                           to_vector(take("schedule/alpha_cum")), to_vector(take("schedule/beta_tilde")));
  ck.normalizer.mean = take("normalizer/mean").transpose();
  ck.normalizer.stddev = take("normalizer/stddev").transpose();
  const auto& c = ck.config;
  ck.denoiser = DenoiserParams::zeros({c.d, c.conv_width, c.heads, c.window, nodes, c.diffusion_steps});
  ck.denoiser.visit([&](std::string_view n, Eigen::MatrixXd& m) { m = take("denoiser/" + std::string(n)); });
  ck.denoiser.validate();
  ck.initial.strategy = c.initial;
  ck.initial.hidden = c.initial_hidden;
  ck.initial.visit([&](std::string_view n, Eigen::MatrixXd& m) { m = take("initial/" + std::string(n)); });
  if (ck.normalizer.mean.size() != nodes || ck.normalizer.stddev.size() != nodes)
    throw DimensionError("checkpoint: normalizer size differs from node count");
  if (ck.schedule.steps() != c.diffusion_steps) throw DimensionError("checkpoint: schedule length differs from config");
  return ck;
}

}  // namespace rdpi
