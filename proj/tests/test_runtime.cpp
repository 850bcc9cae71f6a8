#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "compartos/runtime.hpp"
#include "helpers.hpp"

using namespace compartos;
using testutil::boot_sources;

namespace {

const char* kChainPolicy =
    "compartment a a.s strategy=return_error\n"
    "compartment b b.s strategy=return_error\n"
    "compartment c c.s strategy=return_error\n"
    "allow a -> b : b_fn\n"
    "allow b -> c : c_fn\n";

// a_fn(x) = b_fn(x) + 1, b_fn(x) = c_fn(x) + 1, c_fn(x) = x + 1
const char* kChainA =
    ".section .text\n"
    ".global a_fn\n"
    "a_fn:\n"
    "    cincoffset csp, csp, -16\n"
    "    cscr cra, 0(csp)\n"
    "    clc c4, cap(b_fn)\n"
    "    cjalr c4\n"
    "    clc cra, 0(csp)\n"
    "    cincoffset csp, csp, 16\n"
    "    li x1, 1\n"
    "    add x0, x0, x1\n"
    "    cret\n";

const char* kChainB =
    ".section .text\n"
    ".interface b_fn\n"
    "b_fn:\n"
    "    cincoffset csp, csp, -16\n"
    "    cscr cra, 0(csp)\n"
    "    clc c4, cap(c_fn)\n"
    "    cjalr c4\n"
    "    clc cra, 0(csp)\n"
    "    cincoffset csp, csp, 16\n"
    "    li x1, 1\n"
    "    add x0, x0, x1\n"
    "    cret\n";

const char* kChainC =
    ".section .text\n"
    ".interface c_fn\n"
    "c_fn:\n"
    "    li x1, 1\n"
    "    add x0, x0, x1\n"
    "    cret\n";

}  // namespace

TEST_CASE("nested cross-compartment calls are transparent to the caller")
{
    auto t = boot_sources(kChainPolicy, {{"a.s", kChainA},
                                         {"b.s", kChainB},
                                         {"c.s", kChainC}});
    Scheduler sched(*t.sys);
    int id = sched.create_task_entry("main", "a", "a_fn", {4});
    RunReport rep = sched.run(100000);
    CHECK(!rep.deadlock);
    REQUIRE(sched.task(id).call_results.size() == 1);
    CHECK(sched.task(id).call_results[0] == 7);  // 4 + 1 + 1 + 1
    CHECK(!sched.task(id).faulted);
}

TEST_CASE("register file survives a cross-compartment call bit-identically")
{
    // a task whose entry loads distinctive values, calls out, then the
    // scheduler-visible result proves x registers other than x0/x1 were
    // untouched by the trampoline round trip
    const char* src_a =
        ".section .text\n"
        ".global probe\n"
        "probe:\n"
        "    li x2, 222\n"
        "    li x3, 333\n"
        "    li x4, 444\n"
        "    cincoffset csp, csp, -16\n"
        "    cscr cra, 0(csp)\n"
        "    clc c4, cap(b_fn)\n"
        "    cjalr c4\n"
        "    clc cra, 0(csp)\n"
        "    cincoffset csp, csp, 16\n"
        "    add x0, x2, x3\n"
        "    add x0, x0, x4\n"
        "    cret\n";
    // callee clobbers everything it can reach
    const char* src_b =
        ".section .text\n"
        ".interface b_fn\n"
        "b_fn:\n"
        "    li x2, 9\n"
        "    li x3, 9\n"
        "    li x4, 9\n"
        "    li x5, 9\n"
        "    li x0, 9\n"
        "    cret\n";
    auto t = boot_sources(
        "compartment a a.s strategy=return_error\n"
        "compartment b b.s strategy=return_error\n"
        "allow a -> b : b_fn\n",
        {{"a.s", src_a}, {"b.s", src_b}});
    Scheduler sched(*t.sys);
    int id = sched.create_task_entry("main", "a", "probe");
    sched.run(100000);
    REQUIRE(sched.task(id).call_results.size() == 1);
    CHECK(sched.task(id).call_results[0] == 222 + 333 + 444);
}

TEST_CASE("scheduler matches a bare machine run for a single task")
{
    const char* src =
        ".section .text\n"
        ".global f\n"
        "f:\n"
        "    li x0, 1\n"
        "    li x1, 20\n"
        ".Lloop:\n"
        "    add x0, x0, x0\n"
        "    li x2, 1\n"
        "    sub x1, x1, x2\n"
        "    bne x1, x2, .Lloop\n"
        "    cret\n";
    auto t = boot_sources("compartment a a.s strategy=return_error\n",
                          {{"a.s", src}});
    Scheduler sched(*t.sys);
    int id = sched.create_task_entry("solo", "a", "f");
    RunReport rep = sched.run(100000);
    REQUIRE(sched.task(id).call_results.size() == 1);
    CHECK(sched.task(id).call_results[0] == Word(1) << 19);
    CHECK(!rep.deadlock);
    CHECK(sched.task(id).state == TaskState::Dead);  // actions exhausted
    CHECK(!sched.task(id).faulted);
}

TEST_CASE("round-robin queue ping-pong with blocking and wakeup")
{
    auto t = boot_sources(
        "compartment a a.s strategy=return_error\n",
        {{"a.s", ".section .text\n.global idle\nidle:\n    cret\n"}});
    Scheduler sched(*t.sys);
    int q = sched.create_queue(2, 8);

    int consumer = sched.create_task("consumer", "a");
    sched.push_action(consumer, TaskAction::receive(q));
    sched.push_action(consumer, TaskAction::receive(q));
    sched.push_action(consumer, TaskAction::receive(q));

    int producer = sched.create_task("producer", "a");
    for (uint8_t i = 1; i <= 3; ++i)
        sched.push_action(producer,
                          TaskAction::send(q, {i, 0, 0, 0, 0, 0, 0, 0}));

    RunReport rep = sched.run(100000);
    CHECK(!rep.deadlock);
    auto& recvd = sched.task(consumer).received;
    REQUIRE(recvd.size() == 3);
    CHECK(recvd[0][0] == 1);
    CHECK(recvd[1][0] == 2);
    CHECK(recvd[2][0] == 3);
    CHECK(sched.task(producer).state == TaskState::Dead);
    CHECK(sched.task(consumer).state == TaskState::Dead);
    // queue traffic carries its bookkeeping cost
    CHECK(sched.task(producer).counters.instructions >=
          3 * (kQueueOverheadCost + kQueuePerWordCost));
}

TEST_CASE("receive before any send blocks, then resumes")
{
    auto t = boot_sources(
        "compartment a a.s strategy=return_error\n",
        {{"a.s", ".section .text\n.global idle\nidle:\n    cret\n"}});
    Scheduler sched(*t.sys);
    int q = sched.create_queue(1, 8);
    int rx = sched.create_task("rx", "a");
    sched.push_action(rx, TaskAction::receive(q));
    int tx = sched.create_task("tx", "a");
    sched.push_action(tx, TaskAction::send(q, {42, 0, 0, 0, 0, 0, 0, 0}));
    RunReport rep = sched.run(100000);
    CHECK(!rep.deadlock);
    REQUIRE(sched.task(rx).received.size() == 1);
    CHECK(sched.task(rx).received[0][0] == 42);
}

TEST_CASE("deadlock is reported when every live task is blocked")
{
    auto t = boot_sources(
        "compartment a a.s strategy=return_error\n",
        {{"a.s", ".section .text\n.global idle\nidle:\n    cret\n"}});
    Scheduler sched(*t.sys);
    int q = sched.create_queue(1, 8);
    int rx = sched.create_task("rx", "a");
    sched.push_action(rx, TaskAction::receive(q));  // nobody will send
    RunReport rep = sched.run(100000);
    CHECK(rep.deadlock);
    CHECK(sched.task(rx).state == TaskState::Blocked);
}

TEST_CASE("tasks interleave fairly: one call per activation")
{
    const char* src =
        ".section .text\n"
        ".global f\n"
        "f:\n"
        "    li x0, 1\n"
        "    cret\n";
    auto t = boot_sources("compartment a a.s strategy=return_error\n",
                          {{"a.s", src}});
    Scheduler sched(*t.sys);
    int t1 = sched.create_task("t1", "a");
    int t2 = sched.create_task("t2", "a");
    for (int i = 0; i < 3; ++i) {
        sched.push_action(t1, TaskAction::call("f"));
        sched.push_action(t2, TaskAction::call("f"));
    }
    sched.run(100000);
    CHECK(sched.task(t1).activations == 3);
    CHECK(sched.task(t2).activations == 3);
    CHECK(sched.task(t1).call_results == std::vector<Word>{1, 1, 1});
    // per-activation max covers one call, not the sum of all three
    CHECK(sched.task(t1).max_activation_instructions <
          sched.task(t1).counters.instructions);
}

TEST_CASE("context switch cost lands between tasks, not inside them")
{
    const char* src =
        ".section .text\n"
        ".global f\n"
        "f:\n"
        "    li x0, 1\n"
        "    cret\n";
    auto boot_once = [&](int ntasks) {
        auto t = boot_sources("compartment a a.s strategy=return_error\n",
                              {{"a.s", src}});
        Scheduler sched(*t.sys);
        std::vector<int> ids;
        for (int i = 0; i < ntasks; ++i)
            ids.push_back(sched.create_task_entry("t" + std::to_string(i), "a", "f"));
        RunReport rep = sched.run(100000);
        uint64_t per_task = 0;
        for (int id : ids)
            per_task += sched.task(id).counters.instructions;
        return std::pair{rep.total_instructions, per_task};
    };
    auto [total1, per1] = boot_once(1);
    auto [total2, per2] = boot_once(2);
    // each task does identical work; the per-task counters exclude switches
    CHECK(per2 == 2 * per1);
    // the second task adds at least one task-to-task switch to the total
    CHECK(total2 - per2 >= (total1 - per1) + kContextSwitchCost);
}

TEST_CASE("task homes pin CGP and compartment id at entry")
{
    const char* src_a =
        ".section .text\n"
        ".global who\n"
        "who:\n"
        "    getcompid x0\n"
        "    cret\n";
    auto t = boot_sources(
        "compartment a a.s strategy=return_error\n"
        "compartment b b.s strategy=return_error\n",
        {{"a.s", src_a},
         {"b.s",
          ".section .text\n.global who_b\nwho_b:\n    getcompid x0\n    cret\n"}});
    Scheduler sched(*t.sys);
    int ta = sched.create_task_entry("ta", "a", "who");
    int tb = sched.create_task_entry("tb", "b", "who_b");
    sched.run(100000);
    Compartment* a = t.sys->find_compartment("a");
    Compartment* b = t.sys->find_compartment("b");
    REQUIRE(sched.task(ta).call_results.size() == 1);
    REQUIRE(sched.task(tb).call_results.size() == 1);
    CHECK(sched.task(ta).call_results[0] == Word(a->id));
    CHECK(sched.task(tb).call_results[0] == Word(b->id));
}
