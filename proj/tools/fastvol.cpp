#include <cstdio>
int main() { std::puts("fastvol cli placeholder"); return 0; }
