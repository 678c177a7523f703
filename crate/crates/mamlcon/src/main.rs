fn main() {
    println!("mamlcon CLI placeholder");
}
