#include "ieatforge/dialogue.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ieatforge/util.hpp"

namespace ieatforge::dialogue {

json DialogueSession::to_json() const {
    json turns_json = json::array();
    for (const auto& t : turns) turns_json.push_back(t.to_json());
    return json{{"session_id", session_id},
                {"turns", turns_json},
                {"emotions", emotions},
                {"trajectory_label",
                 {{"initial", trajectory_label.first}, {"final", trajectory_label.second}}}};
}

DialogueSession DialogueSession::from_json(const json& j) {
    DialogueSession s;
    s.session_id = j.at("session_id").get<std::string>();
    for (const json& t : j.at("turns")) s.turns.push_back(ieat::IEATSample::from_json(t));
    s.emotions = j.at("emotions").get<std::vector<std::string>>();
    s.trajectory_label = {j.at("trajectory_label").at("initial").get<std::string>(),
                          j.at("trajectory_label").at("final").get<std::string>()};
    return s;
}

std::vector<ieat::IEATSample> select_reorg_pool(const std::vector<ieat::IEATSample>& samples,
                                                double fraction, uint64_t seed) {
    if (fraction <= 0.0 || fraction > 1.0) {
        throw PreconditionError("reorg fraction must be in (0, 1]");
    }
    // round-half-up keeps the 40% count reproducible across platforms
    size_t take = static_cast<size_t>(std::floor(fraction * samples.size() + 0.5));
    std::vector<ieat::IEATSample> pool = samples;
    std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    auto rng = make_rng(seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    if (take < pool.size()) pool.resize(take);
    return pool;
}

AssembleResult assemble_sessions(const std::vector<ieat::IEATSample>& pool,
                                 const std::map<int, double>& turn_mix, uint64_t seed,
                                 int max_rejects) {
    double mix_sum = 0.0;
    for (const auto& [turns, p] : turn_mix) {
        if (turns < 2 || turns > 4) throw PreconditionError("turn_mix keys must be in {2,3,4}");
        if (p < 0) throw PreconditionError("turn_mix probabilities must be >= 0");
        mix_sum += p;
    }
    if (std::abs(mix_sum - 1.0) > 1e-9) throw PreconditionError("turn_mix must sum to 1");

    std::set<std::string> distinct;
    for (const auto& s : pool) distinct.insert(s.emotion.label);
    if (!pool.empty() && distinct.size() < 2) {
        throw InfeasiblePoolError("pool is single-emotion; no valid session exists");
    }

    std::vector<ieat::IEATSample> remaining = pool;
    std::sort(remaining.begin(), remaining.end(),
              [](const auto& a, const auto& b) { return a.id < b.id; });
    auto rng = make_rng(seed);
    std::shuffle(remaining.begin(), remaining.end(), rng);

    AssembleResult result;
    int rejects = 0;
    size_t session_index = 0;
    while (remaining.size() >= 2 && rejects <= max_rejects) {
        // draw the turn count from the mix
        double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        int turns = turn_mix.rbegin()->first;
        double acc = 0.0;
        for (const auto& [count, p] : turn_mix) {
            acc += p;
            if (u < acc) {
                turns = count;
                break;
            }
        }
        turns = std::min<int>(turns, static_cast<int>(remaining.size()));
        if (turns < 2) break;

        if (remaining[0].emotion.label == remaining[turns - 1].emotion.label) {
            ++rejects;
            ++result.rejects;
            std::shuffle(remaining.begin(), remaining.end(), rng);
            continue;
        }

        DialogueSession session;
        char buf[16];
        std::snprintf(buf, sizeof(buf), "sess_%04zu", session_index++);
        session.session_id = buf;
        session.turns.assign(remaining.begin(), remaining.begin() + turns);
        for (const auto& t : session.turns) session.emotions.push_back(t.emotion.label);
        session.trajectory_label = {session.emotions.front(), session.emotions.back()};
        result.sessions.push_back(std::move(session));
        remaining.erase(remaining.begin(), remaining.begin() + turns);
    }
    result.leftovers = std::move(remaining);
    return result;
}

std::string session_transcript(const DialogueSession& session) {
    std::string out;
    for (const auto& turn : session.turns) {
        out += "user: " + turn.query_text + "\n";
        out += "assistant: " + turn.response + "\n";
    }
    return out;
}

json emit_trajectory_target(const DialogueSession& session) {
    return json{{"session_id", session.session_id},
                {"task_id", 1},
                {"transcript", session_transcript(session)},
                {"turns", session.turns.size()},
                {"target", session.trajectory_label.first + " → " + session.trajectory_label.second}};
}

void write_session_manifest(const std::filesystem::path& path,
                            const std::vector<DialogueSession>& sessions) {
    std::vector<json> rows;
    rows.reserve(sessions.size());
    for (const auto& s : sessions) rows.push_back(s.to_json());
    write_jsonl(path, rows);
}

std::vector<DialogueSession> load_session_manifest(const std::filesystem::path& path) {
    std::vector<DialogueSession> sessions;
    for (const json& row : read_jsonl(path).rows) sessions.push_back(DialogueSession::from_json(row));
    return sessions;
}

}  // namespace ieatforge::dialogue
