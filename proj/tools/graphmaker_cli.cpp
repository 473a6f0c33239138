#include <cstdio>

int main() {
  std::puts("graphmaker: subcommands not wired yet");
  return 2;
}
