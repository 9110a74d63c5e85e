#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "handover/workflow.hpp"

using namespace handover;
using classify::GestureLabel;
using classify::MovementLabel;
using geometry::Point3;
using workflow::DeliverySession;
using workflow::Directive;
using workflow::ReleaseMonitor;
using workflow::SessionState;
using workflow::TickInputs;
using workflow::WorkflowConfig;

namespace {

const Point3 kHome(0.0, 0.0, 0.4);

TickInputs tick_at(int n, const Point3& position) {
    TickInputs in;
    in.tick = n;
    in.t = n / 15.0;
    in.ee.position = position;
    in.ee.t = in.t;
    return in;
}

Point3 pickup_of(const WorkflowConfig& cfg, const std::string& id) {
    for (const auto& t : cfg.tools)
        if (t.id == id) return t.pickup_pose;
    throw std::runtime_error("no such tool in test");
}

bool has_event(const DeliverySession& s, const std::string& kind) {
    for (const auto& e : s.events())
        if (e.kind == kind) return true;
    return false;
}

} // namespace

TEST_CASE("command parsing resolves tools by keyword tier") {
    const auto tools = workflow::default_tools();

    auto id_of = [&](const std::string& text) {
        return workflow::parse_command(text, tools).tool_id;
    };

    CHECK(id_of("hand me the soldering iron") == "soldering_iron");
    CHECK(id_of("IRON please") == "soldering_iron"); // case-insensitive
    CHECK(id_of("the desoldering pump") == "desoldering_pump");
    CHECK(id_of("i need to desolder this") == "desoldering_pump");
    CHECK(id_of("wire cutter") == "wire_cutter");   // specific beats generic
    CHECK(id_of("pass the cutters") == "wire_cutter");
    CHECK(id_of("some solder") == "soldering_wire"); // generic fallback
    CHECK(id_of("more wire") == "soldering_wire");

    SECTION("ambiguous or unknown phrases parse to no intent") {
        CHECK(!id_of("the iron and the pump").has_value()); // two specific hits
        CHECK(!id_of("bring me a screwdriver").has_value());
        CHECK(!id_of("").has_value());
    }

    SECTION("original text is preserved on the command") {
        const auto cmd = workflow::parse_command("Wire Cutter NOW", tools);
        CHECK(cmd.text == "Wire Cutter NOW");
        CHECK(cmd.tool_id == "wire_cutter");
    }
}

TEST_CASE("release monitor requires a held open hand inside the radius") {
    ReleaseMonitor mon(0.03, 3);
    const Point3 target(0.3, 0.3, 0.3);
    const Point3 near = target + Point3(0.01, 0.0, 0.0);
    const Point3 far = target + Point3(0.1, 0.0, 0.0);

    CHECK_FALSE(mon.update(near, target, GestureLabel::open));
    CHECK_FALSE(mon.update(near, target, GestureLabel::open));
    CHECK(mon.update(near, target, GestureLabel::open)); // third consecutive tick

    SECTION("wrong gesture resets the dwell") {
        mon.reset();
        mon.update(near, target, GestureLabel::open);
        mon.update(near, target, GestureLabel::closed);
        mon.update(near, target, GestureLabel::open);
        CHECK_FALSE(mon.update(near, target, GestureLabel::open));
        CHECK(mon.update(near, target, GestureLabel::open));
    }

    SECTION("leaving the radius resets the dwell") {
        mon.reset();
        mon.update(near, target, GestureLabel::open);
        mon.update(far, target, GestureLabel::open);
        CHECK(mon.streak() == 0);
    }

    SECTION("exactly on the radius counts as inside") {
        ReleaseMonitor edge(0.03, 1);
        CHECK(edge.update(target + Point3(0.03, 0, 0), target, GestureLabel::open));
    }
}

TEST_CASE("happy path: fetch, wait, deliver, release, return") {
    WorkflowConfig cfg;
    DeliverySession session(cfg, {}, kHome);
    const Point3 pickup = pickup_of(cfg, "wire_cutter");
    const Point3 palm(0.3, 0.3, 0.3);
    int tick = 0;

    // Idle: an actionable command starts the fetch.
    auto in = tick_at(tick++, kHome);
    in.command = workflow::parse_command("wire cutter please", cfg.tools);
    auto d = session.fsm_step(in);
    CHECK(session.state() == SessionState::fetching);
    REQUIRE(d.kind == Directive::Kind::move);
    CHECK(d.target == pickup);
    CHECK(d.mode == control::Mode::lqr);
    CHECK(d.speed_cap == 0.25);
    CHECK(session.requested_tool() == "wire_cutter");

    // Fetching: still far away keeps moving; arriving asks for the pick-up.
    d = session.fsm_step(tick_at(tick++, kHome + Point3(0.05, 0, 0)));
    CHECK(d.kind == Directive::Kind::move);
    d = session.fsm_step(tick_at(tick++, pickup + Point3(0.01, 0, 0)));
    REQUIRE(d.kind == Directive::Kind::pick_up);
    CHECK(d.tool_id == "wire_cutter");
    CHECK(session.state() == SessionState::waiting_for_hand);

    // Waiting: no hand -> hold; open hand -> delivering.
    auto wait_in = tick_at(tick++, pickup);
    wait_in.ee.gripper.tool = "wire_cutter";
    d = session.fsm_step(wait_in);
    CHECK(d.kind == Directive::Kind::hold);
    wait_in = tick_at(tick++, pickup);
    wait_in.ee.gripper.tool = "wire_cutter";
    wait_in.gesture = GestureLabel::open;
    d = session.fsm_step(wait_in);
    CHECK(session.state() == SessionState::delivering);

    // Delivering: palm position becomes the move target.
    auto deliver_in = tick_at(tick++, pickup);
    deliver_in.ee.gripper.tool = "wire_cutter";
    deliver_in.gesture = GestureLabel::open;
    deliver_in.palm_base = palm;
    deliver_in.urgency = MovementLabel::medium_urgency;
    d = session.fsm_step(deliver_in);
    REQUIRE(d.kind == Directive::Kind::move);
    CHECK(d.target == palm);
    CHECK(d.speed_cap == 0.25);
    CHECK(session.target() == palm);

    // High urgency switches the move directive to the PID loop.
    deliver_in = tick_at(tick++, palm + Point3(0.2, 0, 0));
    deliver_in.ee.gripper.tool = "wire_cutter";
    deliver_in.gesture = GestureLabel::open;
    deliver_in.palm_base = palm;
    deliver_in.urgency = MovementLabel::high_urgency;
    d = session.fsm_step(deliver_in);
    REQUIRE(d.kind == Directive::Kind::move);
    CHECK(d.mode == control::Mode::pid);
    CHECK(d.speed_cap == 0.50);

    // Five consecutive open-hand ticks within the release radius.
    for (int i = 0; i < 5; ++i) {
        auto close_in = tick_at(tick++, palm + Point3(0.02, 0, 0));
        close_in.ee.gripper.tool = "wire_cutter";
        close_in.gesture = GestureLabel::open;
        close_in.palm_base = palm;
        d = session.fsm_step(close_in);
    }
    REQUIRE(d.kind == Directive::Kind::release);
    CHECK(session.state() == SessionState::releasing);

    // Releasing: once the gripper reports empty, head home.
    auto rel_in = tick_at(tick++, palm);
    d = session.fsm_step(rel_in); // gripper empty now
    REQUIRE(d.kind == Directive::Kind::move);
    CHECK(d.target == kHome);
    CHECK(session.state() == SessionState::returning);

    // Returning: arrival flips to idle and clears the request.
    d = session.fsm_step(tick_at(tick++, kHome + Point3(0.01, 0, 0)));
    CHECK(d.kind == Directive::Kind::none);
    CHECK(session.state() == SessionState::idle);
    CHECK(!session.requested_tool().has_value());
}

TEST_CASE("idle edge cases") {
    WorkflowConfig cfg;

    SECTION("unparsed command is logged and ignored") {
        DeliverySession session(cfg, {}, kHome);
        auto in = tick_at(0, kHome);
        in.command = workflow::parse_command("bring me a sandwich", cfg.tools);
        const auto d = session.fsm_step(in);
        CHECK(d.kind == Directive::Kind::none);
        CHECK(session.state() == SessionState::idle);
        CHECK(has_event(session, "command_unrecognized"));
    }

    SECTION("fetch is refused while the gripper still holds a tool") {
        DeliverySession session(cfg, {}, kHome);
        auto in = tick_at(0, kHome);
        in.command = workflow::parse_command("iron", cfg.tools);
        in.ee.gripper.tool = "wire_cutter"; // left over from an aborted delivery
        const auto d = session.fsm_step(in);
        CHECK(d.kind == Directive::Kind::none);
        CHECK(session.state() == SessionState::idle);
        CHECK(has_event(session, "command_rejected"));
    }

    SECTION("commands while busy are logged as ignored") {
        DeliverySession session(cfg, {}, kHome);
        auto in = tick_at(0, kHome);
        in.command = workflow::parse_command("iron", cfg.tools);
        session.fsm_step(in);
        REQUIRE(session.state() == SessionState::fetching);

        auto busy = tick_at(1, kHome);
        busy.command = workflow::parse_command("pump", cfg.tools);
        session.fsm_step(busy);
        CHECK(session.requested_tool() == "soldering_iron"); // unchanged
        CHECK(has_event(session, "command_ignored"));
    }
}

TEST_CASE("occupied hands put delivery on hold") {
    WorkflowConfig cfg;
    DeliverySession session(cfg, {}, kHome);
    const Point3 pickup = pickup_of(cfg, "soldering_iron");

    auto in = tick_at(0, kHome);
    in.command = workflow::parse_command("iron", cfg.tools);
    session.fsm_step(in);
    session.fsm_step(tick_at(1, pickup)); // arrive -> waiting
    auto open_in = tick_at(2, pickup);
    open_in.gesture = GestureLabel::open;
    session.fsm_step(open_in); // -> delivering
    REQUIRE(session.state() == SessionState::delivering);

    auto occ = tick_at(3, pickup);
    occ.gesture = GestureLabel::occupied;
    occ.palm_base = Point3(0.3, 0.3, 0.3);
    const auto d = session.fsm_step(occ);
    CHECK(d.kind == Directive::Kind::hold);
    CHECK(session.state() == SessionState::delivering); // still delivering

    // When the hand opens again, movement resumes.
    auto open2 = tick_at(4, pickup);
    open2.gesture = GestureLabel::open;
    open2.palm_base = Point3(0.3, 0.3, 0.3);
    CHECK(session.fsm_step(open2).kind == Directive::Kind::move);
}

TEST_CASE("go_away aborts from every active state") {
    WorkflowConfig cfg;
    const Point3 pickup = pickup_of(cfg, "desoldering_pump");

    auto drive_to = [&](DeliverySession& s, SessionState target) {
        int tick = 0;
        if (target == SessionState::idle) return tick;
        auto in = tick_at(tick++, kHome);
        in.command = workflow::parse_command("pump", cfg.tools);
        s.fsm_step(in);
        if (target == SessionState::fetching) return tick;
        s.fsm_step(tick_at(tick++, pickup));
        if (target == SessionState::waiting_for_hand) return tick;
        auto open_in = tick_at(tick++, pickup);
        open_in.gesture = GestureLabel::open;
        s.fsm_step(open_in);
        if (target == SessionState::delivering) return tick;
        for (int i = 0; i < 5; ++i) {
            auto rel = tick_at(tick++, Point3(0.3, 0.3, 0.3));
            rel.gesture = GestureLabel::open;
            rel.palm_base = Point3(0.3, 0.3, 0.3);
            rel.ee.gripper.tool = "desoldering_pump";
            s.fsm_step(rel);
        }
        return tick; // releasing
    };

    for (auto state : {SessionState::fetching, SessionState::waiting_for_hand,
                       SessionState::delivering, SessionState::releasing}) {
        DeliverySession session(cfg, {}, kHome);
        int tick = drive_to(session, state);
        REQUIRE(session.state() == state);

        auto away = tick_at(tick, Point3(0.2, 0.2, 0.2));
        away.urgency = MovementLabel::go_away;
        const auto d = session.fsm_step(away);
        INFO("from state " << workflow::to_string(state));
        CHECK(session.state() == SessionState::returning);
        REQUIRE(d.kind == Directive::Kind::move);
        CHECK(d.target == kHome);
        CHECK(!session.target().has_value());
    }

    SECTION("go_away while idle is a no-op") {
        DeliverySession session(cfg, {}, kHome);
        auto in = tick_at(0, kHome);
        in.urgency = MovementLabel::go_away;
        const auto d = session.fsm_step(in);
        CHECK(session.state() == SessionState::idle);
        CHECK(d.kind != Directive::Kind::move);
    }

    SECTION("go_away while already returning does not re-transition") {
        DeliverySession session(cfg, {}, kHome);
        int tick = drive_to(session, SessionState::delivering);
        auto in = tick_at(tick++, Point3(0.2, 0.2, 0.2));
        in.urgency = MovementLabel::go_away;
        session.fsm_step(in);
        REQUIRE(session.state() == SessionState::returning);
        const auto before = session.events().size();
        auto again = tick_at(tick, Point3(0.2, 0.2, 0.2));
        again.urgency = MovementLabel::go_away;
        const auto d = session.fsm_step(again);
        CHECK(session.state() == SessionState::returning);
        CHECK(d.kind == Directive::Kind::move); // keeps heading home
        // No new transition event was logged for the repeat.
        bool new_transition = false;
        for (std::size_t i = before; i < session.events().size(); ++i)
            if (session.events()[i].kind == "transition") new_transition = true;
        CHECK_FALSE(new_transition);
    }
}

TEST_CASE("collision latch stops the session permanently") {
    WorkflowConfig cfg;
    DeliverySession session(cfg, {}, kHome);

    auto in = tick_at(0, kHome);
    in.command = workflow::parse_command("iron", cfg.tools);
    session.fsm_step(in);
    REQUIRE(session.state() == SessionState::fetching);

    auto crash = tick_at(1, Point3(0.1, -0.1, 0.2));
    crash.ee.collision_latched = true;
    const auto d = session.fsm_step(crash);
    CHECK(d.kind == Directive::Kind::none);
    CHECK(session.state() == SessionState::stopped);

    // Nothing revives a stopped session; commands are rejected with a log.
    auto later = tick_at(2, kHome);
    later.command = workflow::parse_command("pump", cfg.tools);
    CHECK(session.fsm_step(later).kind == Directive::Kind::none);
    CHECK(session.state() == SessionState::stopped);
    CHECK(has_event(session, "command_rejected"));

    auto away = tick_at(3, kHome);
    away.urgency = MovementLabel::go_away;
    CHECK(session.fsm_step(away).kind == Directive::Kind::none);
    CHECK(session.state() == SessionState::stopped);
}

TEST_CASE("timeouts send the robot home") {
    WorkflowConfig cfg;
    cfg.wait_timeout_ticks = 10;
    const Point3 pickup = pickup_of(cfg, "soldering_iron");

    SECTION("waiting for a hand that never shows") {
        DeliverySession session(cfg, {}, kHome);
        auto in = tick_at(0, kHome);
        in.command = workflow::parse_command("iron", cfg.tools);
        session.fsm_step(in);
        session.fsm_step(tick_at(1, pickup));
        REQUIRE(session.state() == SessionState::waiting_for_hand);

        int tick = 2;
        Directive d;
        for (int i = 0; i <= cfg.wait_timeout_ticks; ++i) d = session.fsm_step(tick_at(tick++, pickup));
        CHECK(session.state() == SessionState::returning);
        CHECK(d.kind == Directive::Kind::move);
        CHECK(d.target == kHome);
    }

    SECTION("losing the palm mid-delivery") {
        DeliverySession session(cfg, {}, kHome);
        auto in = tick_at(0, kHome);
        in.command = workflow::parse_command("iron", cfg.tools);
        session.fsm_step(in);
        session.fsm_step(tick_at(1, pickup));
        auto open_in = tick_at(2, pickup);
        open_in.gesture = GestureLabel::open;
        session.fsm_step(open_in);
        REQUIRE(session.state() == SessionState::delivering);

        // One tick with a palm fixes a target; then the hand vanishes.
        auto seen = tick_at(3, pickup);
        seen.palm_base = Point3(0.3, 0.3, 0.3);
        seen.gesture = GestureLabel::open;
        session.fsm_step(seen);
        int tick = 4;
        for (int i = 0; i <= cfg.wait_timeout_ticks; ++i) session.fsm_step(tick_at(tick++, pickup));
        CHECK(session.state() == SessionState::returning);
        CHECK(!session.target().has_value());
    }
}

TEST_CASE("fsm fuzzing: random inputs never produce an illegal transition") {
    WorkflowConfig cfg;
    cfg.wait_timeout_ticks = 40;
    DeliverySession session(cfg, {}, kHome);
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_real_distribution<double> pos(-0.4, 0.4);

    const std::vector<std::string> phrases = {"iron",   "pump",  "wire cutter", "solder",
                                              "nothing", "cutters and iron", ""};

    SessionState prev = session.state();
    bool holding = false;
    for (int tick = 0; tick < 2000; ++tick) {
        TickInputs in = tick_at(tick, Point3(pos(rng), pos(rng), std::abs(pos(rng))));
        if (u(rng) < 0.08)
            in.command = workflow::parse_command(phrases[std::size_t(rng() % phrases.size())], cfg.tools);
        const double g = u(rng);
        in.gesture = g < 0.4   ? GestureLabel::no_hand
                     : g < 0.7 ? GestureLabel::open
                     : g < 0.85 ? GestureLabel::closed
                                : GestureLabel::occupied;
        if (u(rng) < 0.6) {
            const double m = u(rng);
            in.urgency = m < 0.5   ? MovementLabel::low_urgency
                         : m < 0.8 ? MovementLabel::medium_urgency
                         : m < 0.97 ? MovementLabel::high_urgency
                                    : MovementLabel::go_away;
        }
        if (u(rng) < 0.5) in.palm_base = Point3(pos(rng), pos(rng), std::abs(pos(rng)));
        in.ee.collision_latched = u(rng) < 0.002;
        if (holding) in.ee.gripper.tool = "held";

        const auto d = session.fsm_step(in);

        // Track gripper contents the way the engine would.
        if (d.kind == Directive::Kind::pick_up) holding = true;
        if (d.kind == Directive::Kind::release) holding = false;

        const SessionState now = session.state();
        INFO("tick " << tick << ": " << workflow::to_string(prev) << " -> "
                     << workflow::to_string(now));
        CHECK(DeliverySession::transition_allowed(prev, now));

        // While fetching/waiting/delivering, a requested tool must exist.
        if (now == SessionState::fetching || now == SessionState::waiting_for_hand)
            CHECK(session.requested_tool().has_value());

        if (now == SessionState::stopped) break;
        prev = now;
    }
}

TEST_CASE("workflow config parses from JSON") {
    const auto j = nlohmann::json::parse(R"({
        "arrive_radius": 0.05,
        "release_dwell_ticks": 8,
        "tools": [
            {"id": "probe", "pickup_pose": [0.1, 0.2, 0.3], "keywords": ["probe"]},
            {"id": "brush", "pickup_pose": [0.2, 0.1, 0.3], "generic_keywords": ["clean"]}
        ]
    })");
    const auto cfg = workflow::workflow_config_from_json(j);
    CHECK(cfg.arrive_radius == 0.05);
    CHECK(cfg.release_radius == 0.03); // default kept
    CHECK(cfg.release_dwell_ticks == 8);
    CHECK(cfg.wait_timeout_ticks == 150);
    REQUIRE(cfg.tools.size() == 2);
    CHECK(cfg.tools[0].id == "probe");
    CHECK(cfg.tools[1].pickup_pose == Point3(0.2, 0.1, 0.3));
    CHECK(workflow::parse_command("clean this up", cfg.tools).tool_id == "brush");

    SECTION("bad pickup pose") {
        auto bad = j;
        bad["tools"][0]["pickup_pose"] = {0.1};
        CHECK_THROWS_AS(workflow::workflow_config_from_json(bad), ConfigError);
    }
}
