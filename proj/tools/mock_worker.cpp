// Scriptable external process used by the supervisor tests: prints lines,
// ticks with timestamps, sleeps, hangs or exits with a chosen code.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <thread>

int main(int argc, char** argv) {
    CLI::App app{"mock worker process"};
    int lines = 0;
    int exit_code = 0;
    double sleep_s = 0.0;
    bool hang = false;
    int tick_ms = 0;
    int ticks = 0;
    app.add_option("--lines", lines, "print N numbered lines to stdout");
    app.add_option("--exit-code", exit_code, "exit status");
    app.add_option("--sleep", sleep_s, "sleep this many seconds before exiting");
    app.add_flag("--hang", hang, "never exit");
    app.add_option("--tick-ms", tick_ms, "print a timestamped tick every M milliseconds");
    app.add_option("--ticks", ticks, "number of ticks to print");
    CLI11_PARSE(app, argc, argv);

    setvbuf(stdout, nullptr, _IOLBF, 0);

    for (int i = 0; i < lines; i++) std::printf("line %d\n", i);

    for (int i = 0; i < ticks; i++) {
        auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
        std::printf("tick %d %lld\n", i, static_cast<long long>(now));
        std::this_thread::sleep_for(std::chrono::milliseconds(tick_ms));
    }

    if (sleep_s > 0)
        std::this_thread::sleep_for(std::chrono::duration<double>(sleep_s));
    while (hang) std::this_thread::sleep_for(std::chrono::seconds(1));
    return exit_code;
}
