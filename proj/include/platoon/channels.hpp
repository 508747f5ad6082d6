#pragma once

#include "platoon/common.hpp"

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace platoon::channels {

struct ChannelSet {
  Level level = Level::Full;
  int kappa = 0;
  std::vector<Channel> pairs;                // sorted
  std::vector<std::vector<int>> senders_of;  // H_i per receiver

  bool contains(Channel c) const;
  std::size_t size() const { return pairs.size(); }
  int index_of(Channel c) const;  // position in pairs, -1 when absent
};

ChannelSet active_set(Level level, int kappa);

enum class AttackKind { None, Replay, Aggressive, CustomAdditive };

std::string to_string(AttackKind k);
AttackKind attack_kind_from_string(const std::string& s);

// Absolute messages recorded from an un-attacked run.
struct Recording {
  int kappa = 0;
  Level level = Level::Full;
  double dt = kControlDt;
  std::uint64_t seed = 0;
  std::map<Channel, std::vector<VectorXd>> series;

  long length() const;
  void save(std::ostream& os) const;
  static Recording load(std::istream& is);
  void save(const std::string& path) const;
  static Recording load(const std::string& path);
  bool operator==(const Recording& o) const;
};

using AdditiveFn = std::function<VectorXd(Channel, long step, const VectorXd& y)>;

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  std::vector<Channel> targets;  // never contains self-channels
  double start_time = 100.0;
  long replay_offset = 0;        // recording step played at onset
  std::shared_ptr<const Recording> recording;
  AdditiveFn additive;

  long onset_step(double dt = kControlDt) const;
  bool targets_channel(Channel c) const;
  bool active(long n, double dt = kControlDt) const;
};

// s = y + a for one channel at step n; y is the sender's absolute message.
VectorXd transmit(const VectorXd& y_j, Channel c, const AttackSpec& attack, long n, double dt = kControlDt);

AttackSpec make_replay(std::shared_ptr<const Recording> recording, const std::vector<Channel>& subset, double start,
                       long offset = 0);
AttackSpec make_aggressive(const ChannelSet& H, double start);

// Non-self channels of H.
std::vector<Channel> attackable(const ChannelSet& H);
// Seeded random subset of the attackable channels (at least one).
std::vector<Channel> select_channel_subset(const ChannelSet& H, double fraction, std::uint64_t seed);

}  // namespace platoon::channels
