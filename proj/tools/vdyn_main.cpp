#include <cstdio>

int main() {
  std::fprintf(stderr, "vdyn: CLI not wired up yet\n");
  return 2;
}
