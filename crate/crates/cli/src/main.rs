fn main() {
    println!("elastamr");
}
