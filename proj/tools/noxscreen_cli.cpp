// Placeholder while the pipeline layer is under construction.
int main() { return 0; }
