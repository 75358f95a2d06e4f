#include <cstdio>

int main() {
    std::puts("spectrum: scaffolding; subcommands land with the harness");
    return 0;
}
