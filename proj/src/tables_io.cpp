#include "platoon/detector.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace platoon::detector {

namespace {

constexpr const char* kMagic = "# platoon-tables 1";

template <class T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void get(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw IoError("tables file: truncated data block");
}

void put_matrices(std::ostream& os, const std::vector<MatrixXd>& ms, int dim) {
  for (const auto& m : ms) {
    if (m.rows() != dim || m.cols() != dim) throw IoError("tables file: matrix with unexpected shape");
    os.write(reinterpret_cast<const char*>(m.data()), sizeof(double) * dim * dim);
  }
}

void get_matrices(std::istream& is, std::vector<MatrixXd>& ms, long n, int dim) {
  ms.assign(n, MatrixXd(dim, dim));
  for (auto& m : ms) {
    is.read(reinterpret_cast<char*>(m.data()), sizeof(double) * dim * dim);
    if (!is) throw IoError("tables file: truncated matrix block");
  }
}

template <class T>
void put_vec(std::ostream& os, const std::vector<T>& v) {
  put<std::uint64_t>(os, v.size());
  if (!v.empty()) os.write(reinterpret_cast<const char*>(v.data()), sizeof(T) * v.size());
}

template <class T>
void get_vec(std::istream& is, std::vector<T>& v) {
  std::uint64_t n = 0;
  get(is, n);
  if (n > (1ull << 34)) throw IoError("tables file: implausible vector length");
  v.resize(n);
  if (n) is.read(reinterpret_cast<char*>(v.data()), sizeof(T) * n);
  if (!is) throw IoError("tables file: truncated vector block");
}

double parse_double(const std::string& t) {
  double v = 0.0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) throw IoError("tables file: bad number '" + t + "'");
  return v;
}

bool same(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

}  // namespace

void NormalizationTables::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write tables file " + path);
  os << kMagic << '\n';
  os << "kappa " << kappa << '\n'
     << "level " << to_int(level) << '\n'
     << "ell " << ell << '\n'
     << "fa_rate " << format_double(fa_rate) << '\n'
     << "trajectory_hash " << trajectory_hash << '\n'
     << "trajectory_size " << trajectory_size << '\n'
     << "v_bin " << v_bin << '\n'
     << "g_bin " << g_bin << '\n'
     << "decay " << format_double(decay) << '\n'
     << "half_width " << half_width << '\n'
     << "lti " << (lti ? 1 : 0) << '\n'
     << "channels " << channels.size() << '\n';
  for (const auto& t : channels)
    os << "channel " << t.channel.receiver + 1 << ' ' << t.channel.sender + 1 << " r_dim " << t.r_dim << " q_dim "
       << t.q_dim << " rho " << t.rho << " threshold " << format_double(t.threshold) << " V " << t.V.size() << " G "
       << t.G.size() << '\n';
  os << "data\n";
  for (const auto& t : channels) {
    put_matrices(os, t.V, t.dim());
    put_matrices(os, t.G, ell);
    put_vec(os, t.f);
    put_vec(os, t.b);
    put_vec(os, t.g);
    put_vec(os, t.v_filled);
    put_vec(os, t.g_filled);
    put_vec(os, t.v_floored);
  }
  if (!os) throw IoError("failed writing tables file " + path);
}

NormalizationTables NormalizationTables::load(const std::string& path, std::uint64_t expected_hash) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open tables file " + path);
  std::string line;
  if (!std::getline(is, line) || line != kMagic) throw IoError(path + " is not a tables file");
  NormalizationTables t;
  auto field = [&](const char* name) {
    if (!std::getline(is, line)) throw IoError("tables file: header ends early");
    std::istringstream ls(line);
    std::string key, value;
    ls >> key >> value;
    if (key != name) throw IoError(std::string("tables file: expected '") + name + "'");
    return value;
  };
  t.kappa = std::stoi(field("kappa"));
  t.level = level_from_int(std::stoi(field("level")));
  t.ell = std::stoi(field("ell"));
  t.fa_rate = parse_double(field("fa_rate"));
  t.trajectory_hash = std::stoull(field("trajectory_hash"));
  t.trajectory_size = std::stol(field("trajectory_size"));
  t.v_bin = std::stoi(field("v_bin"));
  t.g_bin = std::stoi(field("g_bin"));
  t.decay = parse_double(field("decay"));
  t.half_width = std::stoi(field("half_width"));
  t.lti = std::stoi(field("lti")) != 0;
  std::size_t n = std::stoul(field("channels"));
  if (t.trajectory_hash != expected_hash)
    throw IoError("tables file " + path + " was calibrated against a different trajectory");
  std::vector<std::pair<long, long>> sizes;
  for (std::size_t c = 0; c < n; ++c) {
    if (!std::getline(is, line)) throw IoError("tables file: channel list ends early");
    std::istringstream ls(line);
    std::string key, tok;
    ChannelTable ct;
    int i = 0, j = 0;
    long nv = 0, ng = 0;
    ls >> key >> i >> j;
    if (key != "channel") throw IoError("tables file: malformed channel line");
    ls >> key >> ct.r_dim >> key >> ct.q_dim >> key >> ct.rho >> key >> tok;
    ct.threshold = parse_double(tok);
    ls >> key >> nv >> key >> ng;
    if (!ls) throw IoError("tables file: malformed channel line");
    ct.channel = {i - 1, j - 1};
    t.channels.push_back(std::move(ct));
    sizes.emplace_back(nv, ng);
  }
  if (!std::getline(is, line) || line != "data") throw IoError("tables file: missing data marker");
  for (std::size_t c = 0; c < n; ++c) {
    auto& ct = t.channels[c];
    get_matrices(is, ct.V, sizes[c].first, ct.dim());
    get_matrices(is, ct.G, sizes[c].second, t.ell);
    get_vec(is, ct.f);
    get_vec(is, ct.b);
    get_vec(is, ct.g);
    get_vec(is, ct.v_filled);
    get_vec(is, ct.g_filled);
    get_vec(is, ct.v_floored);
  }
  t.factor_G();
  return t;
}

bool NormalizationTables::operator==(const NormalizationTables& o) const {
  if (kappa != o.kappa || level != o.level || ell != o.ell || !same(fa_rate, o.fa_rate) ||
      trajectory_hash != o.trajectory_hash || trajectory_size != o.trajectory_size || v_bin != o.v_bin ||
      g_bin != o.g_bin || decay != o.decay || half_width != o.half_width || lti != o.lti ||
      channels.size() != o.channels.size())
    return false;
  for (std::size_t c = 0; c < channels.size(); ++c) {
    const auto &a = channels[c], &b = o.channels[c];
    if (a.channel != b.channel || a.r_dim != b.r_dim || a.q_dim != b.q_dim || a.rho != b.rho ||
        !same(a.threshold, b.threshold) || a.V.size() != b.V.size() || a.G.size() != b.G.size() || a.f != b.f ||
        a.b != b.b || a.g != b.g || a.v_filled != b.v_filled || a.g_filled != b.g_filled ||
        a.v_floored != b.v_floored)
      return false;
    for (std::size_t k = 0; k < a.V.size(); ++k)
      if (a.V[k] != b.V[k]) return false;
    for (std::size_t k = 0; k < a.G.size(); ++k)
      if (a.G[k] != b.G[k]) return false;
  }
  return true;
}

}  // namespace platoon::detector
