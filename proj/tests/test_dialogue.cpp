#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <set>

#include "ieatforge/dialogue.hpp"
#include "ieatforge/util.hpp"
#include "test_support.hpp"

using namespace ieatforge;
using namespace ieatforge::dialogue;
using ieat::IEATSample;

namespace {

IEATSample make_sample(size_t index, const std::string& emotion) {
    IEATSample s;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "s_%04zu", index);
    s.id = buf;
    s.task_id = 3;
    s.query_text = "query " + std::to_string(index);
    s.prefix = {"t_default", "<think>The user sounds " + emotion + ", likely because", emotion};
    s.reasoning = "The user sounds " + emotion + ", likely because of recent events.";
    s.response = "response " + std::to_string(index);
    s.emotion.label = emotion;
    s.emotion.posterior[emotion] = 1.0;
    s.language = clients::Language::en;
    return s;
}

std::vector<IEATSample> alternating_pool(size_t n) {
    std::vector<IEATSample> pool;
    for (size_t i = 0; i < n; ++i) pool.push_back(make_sample(i, i % 2 ? "sad" : "happy"));
    return pool;
}

const std::map<int, double> kUniformMix = {{2, 1.0 / 3}, {3, 1.0 / 3}, {4, 1.0 / 3}};

}  // namespace

TEST_CASE("select_reorg_pool takes 40% of 100 samples") {
    auto pool = alternating_pool(100);
    auto selected = select_reorg_pool(pool, 0.40, 5);
    CHECK(selected.size() == 40);
}

TEST_CASE("select_reorg_pool fraction one keeps everything") {
    auto pool = alternating_pool(17);
    CHECK(select_reorg_pool(pool, 1.0, 5).size() == 17);
}

TEST_CASE("select_reorg_pool is deterministic and duplicate-free") {
    auto pool = alternating_pool(50);
    auto a = select_reorg_pool(pool, 0.4, 9);
    auto b = select_reorg_pool(pool, 0.4, 9);
    REQUIRE(a.size() == b.size());
    std::set<std::string> ids;
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].id == b[i].id);
        ids.insert(a[i].id);
    }
    CHECK(ids.size() == a.size());
}

TEST_CASE("selection count stays within half a sample of the exact fraction") {
    for (size_t n = 0; n <= 25; ++n) {
        auto selected = select_reorg_pool(alternating_pool(std::max<size_t>(n, 1)), 0.40, 3);
        if (n == 0) continue;
        double expected = 0.40 * static_cast<double>(n);
        auto again = select_reorg_pool(alternating_pool(n), 0.40, 3);
        CHECK(std::abs(static_cast<double>(again.size()) - expected) <= 0.5);
        (void)selected;
    }
    CHECK_THROWS_AS(select_reorg_pool(alternating_pool(4), 0.0, 1), PreconditionError);
    CHECK_THROWS_AS(select_reorg_pool(alternating_pool(4), 1.5, 1), PreconditionError);
}

TEST_CASE("assemble_sessions yields 2-4 turn sessions with differing endpoints") {
    auto result = assemble_sessions(alternating_pool(12), kUniformMix, 21, 100);
    CHECK_FALSE(result.sessions.empty());
    for (const auto& session : result.sessions) {
        CHECK(session.turns.size() >= 2);
        CHECK(session.turns.size() <= 4);
        CHECK(session.emotions.front() != session.emotions.back());
        CHECK(session.trajectory_label.first == session.emotions.front());
        CHECK(session.trajectory_label.second == session.emotions.back());
    }
}

TEST_CASE("single-emotion pool is infeasible") {
    std::vector<IEATSample> pool;
    for (size_t i = 0; i < 8; ++i) pool.push_back(make_sample(i, "neutral"));
    CHECK_THROWS_AS(assemble_sessions(pool, kUniformMix, 1, 10), InfeasiblePoolError);
}

TEST_CASE("turn mix must sum to one") {
    CHECK_THROWS_AS(assemble_sessions(alternating_pool(8), {{2, 0.5}, {3, 0.2}}, 1, 10),
                    PreconditionError);
    CHECK_THROWS_AS(assemble_sessions(alternating_pool(8), {{5, 1.0}}, 1, 10), PreconditionError);
}

TEST_CASE("consumed turns plus leftovers account for the whole pool") {
    // randomized 500-sample pool over a varied label set
    const std::vector<std::string> labels = {"happy", "sad", "angry", "neutral", "surprised"};
    std::vector<IEATSample> pool;
    auto rng = make_rng(77);
    for (size_t i = 0; i < 500; ++i) pool.push_back(make_sample(i, labels[rng() % labels.size()]));

    auto result = assemble_sessions(pool, kUniformMix, 13, 200);
    size_t consumed = 0;
    std::set<std::string> seen;
    for (const auto& session : result.sessions) {
        consumed += session.turns.size();
        for (const auto& turn : session.turns) {
            CHECK(seen.insert(turn.id).second);  // disjoint across sessions
        }
    }
    for (const auto& leftover : result.leftovers) CHECK(seen.insert(leftover.id).second);
    CHECK(consumed + result.leftovers.size() == pool.size());
}

TEST_CASE("assembly is deterministic in the seed") {
    auto a = assemble_sessions(alternating_pool(40), kUniformMix, 5, 100);
    auto b = assemble_sessions(alternating_pool(40), kUniformMix, 5, 100);
    REQUIRE(a.sessions.size() == b.sessions.size());
    for (size_t i = 0; i < a.sessions.size(); ++i) {
        REQUIRE(a.sessions[i].turns.size() == b.sessions[i].turns.size());
        for (size_t t = 0; t < a.sessions[i].turns.size(); ++t) {
            CHECK(a.sessions[i].turns[t].id == b.sessions[i].turns[t].id);
        }
    }
}

TEST_CASE("emit_trajectory_target formats the transition and transcript") {
    DialogueSession session;
    session.session_id = "sess_0000";
    session.turns = {make_sample(0, "happy"), make_sample(1, "sad")};
    session.emotions = {"happy", "sad"};
    session.trajectory_label = {"happy", "sad"};

    json target = emit_trajectory_target(session);
    CHECK(target["target"] == "happy → sad");
    CHECK(target["task_id"] == 1);
    CHECK(target["turns"] == 2);
    CHECK(count_occurrences(target["transcript"].get<std::string>(), "user: ") == 2);

    // idempotent
    CHECK(emit_trajectory_target(session) == target);
}

TEST_CASE("session manifest round-trips") {
    auto dir = test_support::tmp_dir("dialogue_manifest");
    auto result = assemble_sessions(alternating_pool(10), kUniformMix, 3, 50);
    write_session_manifest(dir / "sessions.jsonl", result.sessions);
    auto back = load_session_manifest(dir / "sessions.jsonl");
    REQUIRE(back.size() == result.sessions.size());
    for (size_t i = 0; i < back.size(); ++i) {
        CHECK(back[i].to_json() == result.sessions[i].to_json());
    }
}
