#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "helpers.hpp"

using namespace compartos;
using testutil::boot_sources;

namespace {

const char* kAlicePolicy =
    "compartment alice alice.s strategy=return_error\n"
    "compartment bob bob.s strategy=return_error\n"
    "allow alice -> bob : bob_api\n";

const char* kAliceSrc =
    ".section .text\n"
    ".global alice_main\n"
    "alice_main:\n"
    "    cincoffset csp, csp, -16\n"
    "    cscr cra, 0(csp)\n"
    "    clc c4, cap(helper)\n"
    "    cjalr c4\n"
    "    clc c4, cap(bob_api)\n"
    "    cjalr c4\n"
    "    clc cra, 0(csp)\n"
    "    cincoffset csp, csp, 16\n"
    "    cret\n"
    "helper:\n"
    "    li x1, 5\n"
    "    cret\n"
    ".section .data\n"
    "counter: .word 0\n"
    "ptr: .word counter\n";

const char* kBobSrc =
    ".section .text\n"
    ".interface bob_api\n"
    "bob_api:\n"
    "    li x0, 11\n"
    "    cret\n"
    ".section .bss\n"
    "scratch: .zero 32\n";

}  // namespace

TEST_CASE("captable layout: canary, defined symbols, then externals")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    REQUIRE(alice != nullptr);

    // slot 0: permanently untagged canary
    REQUIRE(!alice->slots.empty());
    CHECK(alice->slots[0].symbol.empty());
    const Region& ct = alice->captable();
    // defined symbols precede externals, externals in first-appearance order
    std::vector<SlotClass> classes;
    for (auto& s : alice->slots)
        classes.push_back(s.cls);
    size_t first_ext = 0;
    while (first_ext < classes.size() && classes[first_ext] != SlotClass::External)
        ++first_ext;
    for (size_t i = first_ext; i < classes.size(); ++i)
        CHECK(classes[i] == SlotClass::External);
    CHECK(alice->slot_index("bob_api").has_value());
    CHECK(alice->slots[*alice->slot_index("bob_api")].cls == SlotClass::External);
    CHECK(alice->slot_index("helper").has_value());
    CHECK(alice->slots[*alice->slot_index("helper")].cls == SlotClass::Local);
    CHECK(ct.size >= alice->slots.size() * kCapSize);
}

TEST_CASE("canary slot is untagged and trips CLC")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    Capability ct = t.sys->captable_capability(*alice);
    auto slot0 = load_cap(t.machine->memory(), ct, 0);
    REQUIRE(slot0.ok());
    CHECK(!slot0.value.tag);  // the trapping CLC path refuses it
    CHECK(!t.machine->memory().granule_tag(ct.base));
}

TEST_CASE("defined function slots are bounded sentries")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    Capability ct = t.sys->captable_capability(*alice);
    uint32_t idx = *alice->slot_index("helper");
    auto helper = load_cap(t.machine->memory(), ct, int64_t(idx) * kCapSize);
    REQUIRE(helper.ok());
    CHECK(helper.value.tag);
    CHECK(helper.value.seal == Seal::Sentry);
    const Symbol* sym = alice->find_symbol("helper");
    Capability fc = t.sys->function_capability(*alice, "helper");
    CHECK(fc.base == helper.value.base);
    CHECK(fc.length == sym->size);  // bounded to the symbol, not the section
    CHECK(fc.has(PERM_EXECUTE));
    CHECK(!fc.has(PERM_STORE));
}

TEST_CASE("GPREL patches the CLC immediate with the slot index")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    const Region* text = alice->region(".text");
    REQUIRE(text != nullptr);
    // alice_main instruction 2 is `clc c4, cap(helper)`
    std::array<uint8_t, kInstrSize> raw{};
    t.machine->memory().read_bytes(text->base + 2 * kInstrSize, raw);
    auto in = decode_instruction(raw);
    REQUIRE(in.has_value());
    CHECK(in->op == Opcode::Clc);
    CHECK(uint32_t(in->imm) == *alice->slot_index("helper"));
}

TEST_CASE("ABS relocations write the absolute address of the target")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    const Region* data = alice->region(".data");
    const Symbol* counter = alice->find_symbol("counter");
    const Symbol* ptr = alice->find_symbol("ptr");
    Word stored = t.machine->memory().read_word(Addr(data->base + ptr->offset));
    CHECK(stored == data->base + counter->offset);
}

TEST_CASE("cross-compartment slots hold trampoline sentries, not raw code")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    Compartment* bob = t.sys->find_compartment("bob");
    Capability ct = t.sys->captable_capability(*alice);
    auto cap = load_cap(t.machine->memory(), ct,
                        int64_t(*alice->slot_index("bob_api")) * kCapSize);
    REQUIRE(cap.ok());
    CHECK(cap.value.seal == Seal::Sentry);
    // points into a trampoline, not into bob's .text
    const Region* bob_text = bob->region(".text");
    CHECK(!(cap.value.base >= bob_text->base &&
            cap.value.base < bob_text->base + bob_text->size));
    REQUIRE(t.sys->trampolines().size() == 1);
    const Trampoline& tr = t.sys->trampolines()[0];
    CHECK(cap.value.base >= tr.base);
    CHECK(tr.caller_id == alice->id);
    CHECK(tr.callee_id == bob->id);
    CHECK(tr.symbol == "bob_api");
    // metadata header precedes the code the sentry points at
    CHECK(cap.value.cursor == tr.base + kTrampolineMetaSize);
    REQUIRE(t.sys->edges().size() == 1);
    CHECK(t.sys->edges()[0].caller == "alice");
    CHECK(t.sys->edges()[0].callee == "bob");
}

TEST_CASE("region capabilities follow the section permission rules")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* alice = t.sys->find_compartment("alice");
    const Region* text = alice->region(".text");
    CHECK(text->cap.has(PERM_EXECUTE));
    CHECK(!text->cap.has(PERM_STORE));
    const Region* data = alice->region(".data");
    CHECK(data->cap.has(PERM_LOAD));
    CHECK(data->cap.has(PERM_STORE));
    CHECK(!data->cap.has(PERM_EXECUTE));
    Compartment* bob = t.sys->find_compartment("bob");
    const Region* bss = bob->region(".bss");
    REQUIRE(bss != nullptr);
    CHECK(bss->size == 32);
    std::vector<uint8_t> bytes(bss->size);
    t.machine->memory().read_bytes(bss->base, bytes);
    for (uint8_t b : bytes)
        CHECK(b == 0);
}

TEST_CASE("wrap_function_pointer returns a trampoline sentry")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    Compartment* bob = t.sys->find_compartment("bob");
    Capability fn = t.sys->function_capability(*bob, "bob_api");
    size_t before = t.sys->trampolines().size();
    Capability wrapped = t.sys->wrap_function_pointer(fn, *bob);
    CHECK(wrapped.seal == Seal::Sentry);
    CHECK(t.sys->trampolines().size() == before + 1);
    CHECK(t.sys->trampolines().back().caller_id == -1);
    // a data capability is refused
    Compartment* alice = t.sys->find_compartment("alice");
    try {
        t.sys->wrap_function_pointer(alice->region(".data")->cap, *alice);
        FAIL("expected LoaderError");
    } catch (const LoaderError& e) {
        CHECK(e.kind() == LoaderErrorKind::PermViolation);
    }
}

TEST_CASE("link diagnostics: denied edges leave the slot untagged")
{
    const char* policy =
        "compartment alice alice.s strategy=return_error\n"
        "compartment bob bob.s strategy=return_error\n";  // no allow rule
    auto t = boot_sources(policy, {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    REQUIRE(t.sys->diagnostics().size() == 1);
    CHECK(t.sys->diagnostics()[0].find("denies") != std::string::npos);
    Compartment* alice = t.sys->find_compartment("alice");
    Capability ct = t.sys->captable_capability(*alice);
    auto cap = load_cap(t.machine->memory(), ct,
                        int64_t(*alice->slot_index("bob_api")) * kCapSize);
    REQUIRE(cap.ok());
    CHECK(!cap.value.tag);
    CHECK(t.sys->trampolines().empty());
}

TEST_CASE("boot failures carry a typed error kind")
{
    auto boot_err = [](const std::string& policy,
                       std::map<std::string, std::string> srcs) {
        try {
            boot_sources(policy, std::move(srcs));
        } catch (const LoaderError& e) {
            return e.kind();
        }
        FAIL("expected LoaderError");
        return LoaderErrorKind::LinkError;
    };

    CHECK(boot_err("compartment alice alice.s strategy=return_error\n",
                   {{"alice.s", kAliceSrc}}) ==
          LoaderErrorKind::UnresolvedRequiredSymbol);

    CHECK(boot_err("compartment a a.s strategy=custom\n",
                   {{"a.s", kBobSrc}}) == LoaderErrorKind::LinkError);

    // the policy parser catches duplicate names; the loader still defends
    // itself when driven directly
    Machine m(1u << 20);
    LinkedSystem sys(m);
    CompartmentDecl decl;
    decl.name = "a";
    std::vector<ModuleImage> imgs{assemble(kBobSrc, "a")};
    sys.load_compartment(imgs, decl);
    try {
        sys.load_compartment(imgs, decl);
        FAIL("expected LoaderError");
    } catch (const LoaderError& e) {
        CHECK(e.kind() == LoaderErrorKind::DuplicateCompartmentName);
    }
}

TEST_CASE("comma-grouped modules share one compartment and captable")
{
    const char* policy =
        "compartment lib one.s,two.s strategy=return_error\n";
    const char* one =
        ".section .text\n"
        ".global f1\n"
        "f1:\n"
        "    clc c4, cap(f2)\n"
        "    cjalr c4\n"
        "    cret\n";
    const char* two =
        ".section .text\n"
        ".global f2\n"
        "f2:\n"
        "    li x0, 2\n"
        "    cret\n";
    auto t = boot_sources(policy, {{"one.s", one}, {"two.s", two}});
    CHECK(t.sys->compartments().size() == 1);
    Compartment* lib = t.sys->find_compartment("lib");
    REQUIRE(lib != nullptr);
    // f2 resolves inside the group: no external slot, no trampoline
    CHECK(lib->slots[*lib->slot_index("f2")].cls != SlotClass::External);
    CHECK(t.sys->trampolines().empty());
    CHECK(lib->find_symbol("f1") != nullptr);
    CHECK(lib->find_symbol("f2") != nullptr);
}

TEST_CASE("compartments never see the loader's root capability")
{
    auto t = boot_sources(kAlicePolicy,
                          {{"alice.s", kAliceSrc}, {"bob.s", kBobSrc}});
    const Capability& root = t.sys->root();
    for (auto& comp : t.sys->compartments())
        for (const Region& r : comp->regions) {
            CHECK(!(r.cap.base == root.base && r.cap.length == root.length &&
                    r.cap.perms == root.perms));
            CHECK(r.cap.length < root.length);
        }
}
