#pragma once

#include <map>
#include <string>
#include <vector>

#include "ieatforge/ieat.hpp"

namespace ieatforge::dialogue {

// 2-4 reorganized empathetic-response turns whose first and last emotional
// states differ.
struct DialogueSession {
    std::string session_id;
    std::vector<ieat::IEATSample> turns;
    std::vector<std::string> emotions;  // per-turn labels
    std::pair<std::string, std::string> trajectory_label;

    json to_json() const;
    static DialogueSession from_json(const json& j);
};

// round(fraction * N) of the pool, half-up, without replacement,
// deterministic in seed.
std::vector<ieat::IEATSample> select_reorg_pool(const std::vector<ieat::IEATSample>& samples,
                                                double fraction, uint64_t seed);

struct AssembleResult {
    std::vector<DialogueSession> sessions;
    std::vector<ieat::IEATSample> leftovers;  // returned unconsumed
    size_t rejects = 0;
};

// Greedy seeded assembly: draw a turn count from turn_mix, take that many
// samples, reject and reshuffle when the endpoints share an emotion.
AssembleResult assemble_sessions(const std::vector<ieat::IEATSample>& pool,
                                 const std::map<int, double>& turn_mix, uint64_t seed,
                                 int max_rejects);

// Deterministic dialogue transcript used for targets and judging.
std::string session_transcript(const DialogueSession& session);

// Task-1 supervision record: transcript plus "initial -> final" target.
json emit_trajectory_target(const DialogueSession& session);

void write_session_manifest(const std::filesystem::path& path,
                            const std::vector<DialogueSession>& sessions);
std::vector<DialogueSession> load_session_manifest(const std::filesystem::path& path);

}  // namespace ieatforge::dialogue
