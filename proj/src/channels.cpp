#include "platoon/channels.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace platoon::channels {

bool ChannelSet::contains(Channel c) const { return std::binary_search(pairs.begin(), pairs.end(), c); }

int ChannelSet::index_of(Channel c) const {
  auto it = std::lower_bound(pairs.begin(), pairs.end(), c);
  if (it == pairs.end() || *it != c) return -1;
  return static_cast<int>(it - pairs.begin());
}

ChannelSet active_set(Level level, int kappa) {
  if (kappa < 2) throw ConfigError("active_set: kappa must be at least 2");
  ChannelSet H;
  H.level = level;
  H.kappa = kappa;
  H.senders_of.resize(kappa);
  for (int i = 0; i < kappa; ++i)
    for (int j = 0; j < kappa; ++j) {
      bool on = false;
      switch (level) {
        case Level::Full: on = true; break;
        case Level::LeaderFollow: on = j == 0 || std::abs(i - j) <= 1; break;
        case Level::Acc: on = i == j; break;
      }
      if (on) {
        H.pairs.push_back({i, j});
        H.senders_of[i].push_back(j);
      }
    }
  return H;
}

std::string to_string(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::Replay: return "replay";
    case AttackKind::Aggressive: return "aggressive";
    case AttackKind::CustomAdditive: return "custom";
  }
  return "none";
}

AttackKind attack_kind_from_string(const std::string& s) {
  if (s == "none") return AttackKind::None;
  if (s == "replay") return AttackKind::Replay;
  if (s == "aggressive") return AttackKind::Aggressive;
  if (s == "custom") return AttackKind::CustomAdditive;
  throw ConfigError("unknown attack kind '" + s + "'");
}

long Recording::length() const {
  long n = -1;
  for (const auto& [c, s] : series) n = n < 0 ? static_cast<long>(s.size()) : std::min(n, static_cast<long>(s.size()));
  return std::max(0L, n);
}

bool Recording::operator==(const Recording& o) const {
  if (kappa != o.kappa || level != o.level || dt != o.dt || seed != o.seed || series.size() != o.series.size())
    return false;
  for (const auto& [c, s] : series) {
    auto it = o.series.find(c);
    if (it == o.series.end() || it->second.size() != s.size()) return false;
    for (std::size_t n = 0; n < s.size(); ++n)
      if (s[n].size() != it->second[n].size() || s[n] != it->second[n]) return false;
  }
  return true;
}

void Recording::save(std::ostream& os) const {
  os << "# platoon-recording 1\n";
  os << "kappa " << kappa << "\nlevel " << to_int(level) << "\ndt " << format_double(dt) << "\nseed " << seed
     << "\nchannels " << series.size() << "\n";
  for (const auto& [c, s] : series) {
    int dim = s.empty() ? 0 : static_cast<int>(s.front().size());
    os << "channel " << c.receiver + 1 << ' ' << c.sender + 1 << ' ' << s.size() << ' ' << dim << '\n';
    for (std::size_t n = 0; n < s.size(); ++n) {
      os << n;
      for (int q = 0; q < dim; ++q) os << ' ' << format_double(s[n](q));
      os << '\n';
    }
  }
}

namespace {
double to_double(const std::string& t) {
  double v = 0.0;
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size()) throw IoError("recording file: bad number '" + t + "'");
  return v;
}
}  // namespace

Recording Recording::load(std::istream& is) {
  std::string line, key;
  if (!std::getline(is, line) || line.rfind("# platoon-recording", 0) != 0) throw IoError("not a recording file");
  Recording r;
  int level = 3;
  std::string dt_tok;
  std::size_t count = 0;
  is >> key >> r.kappa >> key >> level >> key >> dt_tok >> key >> r.seed >> key >> count;
  if (!is) throw IoError("recording file: malformed header");
  r.level = level_from_int(level);
  r.dt = to_double(dt_tok);
  for (std::size_t c = 0; c < count; ++c) {
    int i, j, dim;
    std::size_t steps;
    is >> key >> i >> j >> steps >> dim;
    if (!is || key != "channel") throw IoError("recording file: malformed channel header");
    auto& s = r.series[Channel{i - 1, j - 1}];
    s.resize(steps);
    for (std::size_t n = 0; n < steps; ++n) {
      std::size_t nn;
      is >> nn;
      if (!is || nn != n) throw IoError("recording file: row out of order");
      s[n].resize(dim);
      for (int q = 0; q < dim; ++q) {
        std::string tok;
        is >> tok;
        s[n](q) = to_double(tok);
      }
    }
  }
  return r;
}

void Recording::save(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write recording file " + path);
  save(os);
  if (!os) throw IoError("failed writing recording file " + path);
}

Recording Recording::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open recording file " + path);
  return load(is);
}

long AttackSpec::onset_step(double dt) const { return static_cast<long>(std::ceil(start_time / dt - 1e-9)); }

bool AttackSpec::targets_channel(Channel c) const {
  if (c.self()) return false;
  return std::find(targets.begin(), targets.end(), c) != targets.end();
}

bool AttackSpec::active(long n, double dt) const { return kind != AttackKind::None && n >= onset_step(dt); }

VectorXd transmit(const VectorXd& y_j, Channel c, const AttackSpec& attack, long n, double dt) {
  if (!attack.active(n, dt) || !attack.targets_channel(c)) return y_j;
  switch (attack.kind) {
    case AttackKind::None: return y_j;
    case AttackKind::Replay: {
      const auto& series = attack.recording->series.at(c);
      long idx = n - attack.onset_step(dt) + attack.replay_offset;
      if (idx < 0 || idx >= static_cast<long>(series.size()))
        throw ConfigError("replay recording too short for channel (" + std::to_string(c.receiver + 1) + "," +
                          std::to_string(c.sender + 1) + ")");
      return series[idx];
    }
    case AttackKind::Aggressive: {
      VectorXd s = y_j;
      s(s.size() - 1) = 0.0;
      return s;
    }
    case AttackKind::CustomAdditive: return y_j + attack.additive(c, n, y_j);
  }
  return y_j;
}

std::vector<Channel> attackable(const ChannelSet& H) {
  std::vector<Channel> out;
  for (const auto& c : H.pairs)
    if (!c.self()) out.push_back(c);
  return out;
}

AttackSpec make_replay(std::shared_ptr<const Recording> recording, const std::vector<Channel>& subset, double start,
                       long offset) {
  if (!recording) throw ConfigError("replay attack needs a recording");
  AttackSpec a;
  a.kind = AttackKind::Replay;
  a.start_time = start;
  a.replay_offset = offset;
  for (const auto& c : subset) {
    if (c.self()) continue;
    if (!recording->series.count(c))
      throw ConfigError("recording lacks channel (" + std::to_string(c.receiver + 1) + "," +
                        std::to_string(c.sender + 1) + ")");
    a.targets.push_back(c);
  }
  a.recording = std::move(recording);
  return a;
}

AttackSpec make_aggressive(const ChannelSet& H, double start) {
  Channel target{1, 0};
  if (!H.contains(target)) throw ConfigError("aggressive attack needs channel (2,1), absent at this level");
  AttackSpec a;
  a.kind = AttackKind::Aggressive;
  a.start_time = start;
  a.targets = {target};
  return a;
}

std::vector<Channel> select_channel_subset(const ChannelSet& H, double fraction, std::uint64_t seed) {
  std::vector<Channel> pool = attackable(H);
  if (fraction >= 1.0) return pool;
  std::mt19937_64 rng(derive_seed(seed, stream::kAttack));
  std::shuffle(pool.begin(), pool.end(), rng);
  std::size_t n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * pool.size())));
  pool.resize(std::min(n, pool.size()));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace platoon::channels
