// Stand-in reconstruction worker: burns through N events, prints a parseable
// summary line, and can be made to crash mid-run or hang for fault drills.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <thread>

int main(int argc, char** argv) {
    CLI::App app{"mock reconstruction worker"};
    long long events = 0;
    long long fail_at = -1;
    bool hang = false;
    int event_ms = 0;
    app.add_option("--events", events, "number of events to process");
    app.add_option("--fail-at", fail_at, "crash (exit 1) after this many events");
    app.add_flag("--hang", hang, "process events, then never exit");
    app.add_option("--event-ms", event_ms, "milliseconds of work per event");
    CLI11_PARSE(app, argc, argv);

    setvbuf(stdout, nullptr, _IOLBF, 0);

    long long done = 0;
    for (long long i = 0; i < events; i++) {
        if (fail_at >= 0 && i >= fail_at) {
            std::fprintf(stderr, "reconstruction error at event %lld\n", i);
            return 1;
        }
        if (event_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(event_ms));
        done++;
        if (done % 100 == 0) std::printf("progress %lld/%lld\n", done, events);
    }
    if (hang)
        while (true) std::this_thread::sleep_for(std::chrono::seconds(1));
    std::printf("processed %lld events\n", done);
    return 0;
}
