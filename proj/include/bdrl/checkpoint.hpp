#pragma once

#include <memory>
#include <string>

#include "bdrl/policy.hpp"
#include "bdrl/reward.hpp"

namespace bdrl {

// Shared binary container: 8-byte magic, then little-endian u32 header
// fields (format version, vocab size, architecture dims), a u64 parameter
// count and the flat parameter vector as little-endian f32, in
// param_vector() order. Loading validates the header against the paired
// vocab.
void save_reward_checkpoint(const RewardModel& model, const std::string& path);
RewardModel load_reward_checkpoint(const std::string& path,
                                   std::shared_ptr<const Vocab> vocab);

void save_policy_checkpoint(const PolicyLM& policy, const std::string& path);
PolicyLM load_policy_checkpoint(const std::string& path,
                                std::shared_ptr<const Vocab> vocab);

}  // namespace bdrl
