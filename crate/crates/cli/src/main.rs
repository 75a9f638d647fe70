fn main() {
    // placeholder while the library layers are built
}
